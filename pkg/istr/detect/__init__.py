from istr.detect.baseline import baseline_l1_inversion, l1_traversal
from istr.detect.clustering import TwoMeans, kmeans2
from istr.detect.scan import LeadMatrix, ScanResult, detect_scan
from istr.detect.screening import (
    DetectionReport, SuspectPair, candidate_targets, detection_report, screen_suspects, top_biased_pair,
)
from istr.detect.steps import RunCounter, steps_opposite, steps_opposite_batch, steps_unconstrained

__all__ = [
    "baseline_l1_inversion", "l1_traversal", "TwoMeans", "kmeans2", "LeadMatrix", "ScanResult",
    "detect_scan", "DetectionReport", "SuspectPair", "candidate_targets", "detection_report",
    "screen_suspects", "top_biased_pair", "RunCounter", "steps_opposite", "steps_opposite_batch",
    "steps_unconstrained",
]
