from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np

from istr.data_models import ReverseTrigger
from istr.errors import ArgumentError, DimensionError
from istr.models.network import Model

Pair = Tuple[int, int]


@dataclass
class DetectionScore:
    """Detection ACC/TPR judged per class, and per class with the target required to match."""
    class_acc: float
    class_tpr: Optional[float]
    pair_acc: float
    pair_tpr: Optional[float]
    flagged_classes: List[int]
    poisoned_classes: List[int]

    def to_dict(self) -> dict:
        return {
            "class_acc": self.class_acc, "class_tpr": self.class_tpr,
            "pair_acc": self.pair_acc, "pair_tpr": self.pair_tpr,
            "flagged_classes": self.flagged_classes, "poisoned_classes": self.poisoned_classes,
        }


def detection_acc_tpr(flagged: Iterable[Pair], truth: Iterable[Pair], class_count: int) -> DetectionScore:
    """ACC over all classes and TPR over poisoned classes (None when nothing is poisoned)."""
    flagged = {(int(m), int(n)) for m, n in flagged}
    truth = {(int(m), int(n)) for m, n in truth}
    flagged_classes = {m for m, _ in flagged}
    poisoned = {m for m, _ in truth}
    # a poisoned class counts at pair level only if one of its flagged targets is real
    matched = {m for m, n in flagged if (m, n) in truth}

    class_correct = sum((m in flagged_classes) == (m in poisoned) for m in range(class_count))
    pair_correct = sum(
        (m in matched) if m in poisoned else (m not in flagged_classes) for m in range(class_count)
    )
    class_tpr = len(flagged_classes & poisoned) / len(poisoned) if poisoned else None
    pair_tpr = len(matched) / len(poisoned) if poisoned else None
    return DetectionScore(class_correct / class_count, class_tpr, pair_correct / class_count, pair_tpr,
                          sorted(flagged_classes), sorted(poisoned))


def apd(original: np.ndarray, reverse: np.ndarray) -> float:
    """Mean absolute per-pixel difference between two triggers."""
    a = np.asarray(original, dtype=np.float64)
    b = np.asarray(reverse, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"trigger shapes differ: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def fir(model: Model, trigger: Union[ReverseTrigger, np.ndarray], images: np.ndarray, target: int) -> float:
    """Fraction of ``images`` stamped with ``trigger`` that the model assigns to ``target``.

    ``trigger`` is a :class:`ReverseTrigger` or a bare additive delta.
    """
    images = np.asarray(images, dtype=np.float32)
    if len(images) == 0:
        raise ArgumentError("FIR needs at least one sample")
    if isinstance(trigger, ReverseTrigger):
        stamped = trigger.apply(images)
    else:
        stamped = np.clip(images + np.asarray(trigger, dtype=np.float32), 0.0, 1.0)
    return float(np.mean(model.classify(stamped) == target))


def mask_overlap(scores: np.ndarray, support: np.ndarray, top_fraction: float = 0.1) -> float:
    """Share of the top-scoring pixels (top ``top_fraction``) inside the true trigger support."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    support = np.asarray(support, dtype=bool).reshape(-1)
    if scores.shape != support.shape:
        raise DimensionError("scores and support must share a shape")
    if not 0.0 < top_fraction <= 1.0:
        raise ArgumentError(f"top_fraction must lie in (0, 1], got {top_fraction}")
    k = max(1, int(round(top_fraction * scores.size)))
    top = np.argsort(-scores, kind="stable")[:k]
    return float(support[top].mean())


def band_overlap(band: np.ndarray, support: np.ndarray) -> float:
    """Share of in-band pixels inside the true trigger support (0 for an empty band)."""
    band = np.asarray(band, dtype=bool)
    if not band.any():
        return 0.0
    return float(np.asarray(support, dtype=bool)[band].mean())
