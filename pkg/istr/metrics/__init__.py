from istr.metrics.curves import curve_gap, mutation_curves, save_curves, speed_gap
from istr.metrics.report import MetricBundle, PairMetrics, dumps, read_json, save_comparison, write_json
from istr.metrics.scores import DetectionScore, apd, band_overlap, detection_acc_tpr, fir, mask_overlap
from istr.metrics.timing import StageTimer

__all__ = [
    "curve_gap", "mutation_curves", "save_curves", "speed_gap", "MetricBundle", "PairMetrics", "dumps",
    "read_json", "save_comparison", "write_json", "DetectionScore", "apd", "band_overlap", "detection_acc_tpr",
    "fir", "mask_overlap", "StageTimer",
]
