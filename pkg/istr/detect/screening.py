import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from istr.detect.clustering import kmeans2
from istr.detect.scan import LeadMatrix, ScanResult
from istr.errors import StateError

logger = logging.getLogger(__name__)

DEFAULT_MIN_GAP = 0.2
DEFAULT_MIN_SHARE = 0.3
Pair = Tuple[int, int]


@dataclass
class SuspectPair:
    source: int
    target: int
    score: float
    rate: float
    trigger: Optional[np.ndarray] = None

    @property
    def pair(self) -> Pair:
        return self.source, self.target

    def to_dict(self) -> dict:
        return {"source": self.source, "target": self.target, "score": self.score, "rate": self.rate}


@dataclass
class DetectionReport:
    """Flagged (source, target) pairs with the class rates that justified them."""
    pairs: List[SuspectPair]
    class_rates: List[float]
    lower_mean: float
    min_gap: float
    scanned: List[int]
    params: Dict[str, object] = field(default_factory=dict)
    natural: Optional[SuspectPair] = None
    class_speeds: List[float] = field(default_factory=list)

    def __post_init__(self):
        missing = [p.pair for p in self.pairs if p.trigger is None]
        if missing:
            raise StateError(f"flagged pairs without a reverse trigger: {missing}")

    @property
    def flagged_classes(self) -> List[int]:
        return sorted({p.source for p in self.pairs})

    @property
    def flagged_pairs(self) -> List[Pair]:
        return [p.pair for p in self.pairs]

    def repair_pairs(self) -> List[SuspectPair]:
        """Pairs to unlearn: the flagged ones, or the top biased pair when nothing was flagged."""
        if self.pairs:
            return list(self.pairs)
        return [self.natural] if self.natural is not None else []

    def to_dict(self) -> dict:
        return {
            "pairs": [p.to_dict() for p in self.pairs],
            "flagged_classes": self.flagged_classes,
            "class_rates": list(self.class_rates),
            "class_speeds": list(self.class_speeds),
            "lower_mean": self.lower_mean,
            "min_gap": self.min_gap,
            "scanned": list(self.scanned),
            "natural_backdoor": self.natural.to_dict() if self.natural else None,
            "params": dict(self.params),
        }


def candidate_targets(lead: LeadMatrix, source: int) -> List[int]:
    """Upper-cluster columns of ``Lead(source)``, diagonal excluded."""
    columns = np.array([n for n in range(lead.class_count) if n != source])
    if not len(columns):
        return []
    row = lead.counts[source, columns]
    clusters = kmeans2(row)
    return sorted(int(columns[i]) for i in clusters.upper if row[i] > 0)


def screen_suspects(
    lead: LeadMatrix,
    min_gap: float = DEFAULT_MIN_GAP,
    speeds: Optional[Sequence[float]] = None,
    min_share: float = DEFAULT_MIN_SHARE,
) -> Tuple[List[SuspectPair], float]:
    """Flag classes whose mutation stands out, paired with the targets they concentrate on.

    Classes are clustered on ``speeds`` (area under each class's mutation
    curve) when given, else on the converged rates; a converged rate
    saturates once the budget lets every class flip. A target survives only
    if it took at least ``min_share`` of the source's scanned samples.
    Returns the candidate pairs (without triggers) and the lower-cluster mean.
    """
    values = lead.rates() if speeds is None else np.asarray(speeds, dtype=np.float64)
    present = np.flatnonzero(lead.scanned > 0)
    if not len(present) or not lead.counts.any():
        return [], float(values[present].mean()) if len(present) else 0.0
    clusters = kmeans2(values[present])
    upper = {int(present[i]) for i in clusters.upper}
    lower_values = values[present[clusters.lower]]
    lower_mean = float(lower_values.mean()) if len(lower_values) else 0.0

    pairs: List[SuspectPair] = []
    totals = lead.totals()
    rates = lead.rates()
    for m in sorted(upper):
        if values[m] - lower_mean < min_gap:
            continue
        for n in candidate_targets(lead, m):
            if lead.counts[m, n] < min_share * lead.scanned[m]:
                continue
            pairs.append(SuspectPair(m, n, float(lead.counts[m, n] / totals[m]), float(rates[m])))
    logger.info("screening flagged %d pairs (lower-cluster mean %.3f)", len(pairs), lower_mean)
    return pairs, lower_mean


def top_biased_pair(lead: LeadMatrix) -> Optional[Pair]:
    """The (m, n) with the largest ``Lead(m, n)/scanned(m)``; lowest ids win ties."""
    share = np.divide(lead.counts, lead.scanned[:, None], out=np.zeros(lead.counts.shape),
                      where=lead.scanned[:, None] > 0)
    if not share.any():
        return None
    m, n = np.unravel_index(int(np.argmax(share)), share.shape)
    return int(m), int(n)


def detection_report(scan: ScanResult, min_gap: float = DEFAULT_MIN_GAP,
                     min_share: float = DEFAULT_MIN_SHARE) -> DetectionReport:
    """Screen a scan by mutation speed and attach the mean reverse trigger of every flagged pair."""
    lead = scan.lead
    speeds = scan.mutation_rates().mean(axis=1)
    pairs, lower_mean = screen_suspects(lead, min_gap, speeds, min_share)
    for pair in pairs:
        pair.trigger = scan.pair_trigger(pair.source, pair.target)
    natural = None
    if not pairs:
        top = top_biased_pair(lead)
        if top is not None:
            m, n = top
            natural = SuspectPair(m, n, float(lead.counts[m, n] / lead.totals()[m]),
                                  float(lead.rates()[m]), scan.pair_trigger(m, n))
            logger.info("nothing flagged; top biased pair is %s", top)
    params = {"budget": scan.budget, "step_size": scan.step_size, "mode": scan.mode, "runs": scan.runs,
              "fraction": scan.fraction, "objective": scan.objective, "min_share": min_share}
    return DetectionReport(pairs, [float(r) for r in lead.rates()], lower_mean, min_gap,
                           lead.scanned.tolist(), params, natural, [float(s) for s in speeds])
