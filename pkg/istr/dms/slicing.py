import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from istr.dms.priority import differential_variants, priority_map
from istr.errors import ArgumentError, DimensionError
from istr.models.network import Model

logger = logging.getLogger(__name__)

DEFAULT_MINIMUM = 1e-3
AGGREGATE_RULES = ("mean", "max")


@dataclass
class SliceMask:
    """Constraint mask E: in-band locations carry (0, 1], everything else ``minimum``."""
    values: np.ndarray
    band: np.ndarray
    r1: float
    r2: float
    minimum: float = DEFAULT_MINIMUM
    degenerate: bool = False

    def __post_init__(self):
        if not 0.0 < self.minimum < 1.0:
            raise ArgumentError(f"minimum must lie in (0, 1), got {self.minimum}")
        self.band = np.asarray(self.band, dtype=bool)
        if self.values.shape != self.band.shape:
            raise DimensionError(f"mask values {self.values.shape} and band {self.band.shape} differ")
        if np.any(self.values[~self.band] != np.float32(self.minimum)):
            raise ArgumentError("locations outside the band must hold the minimum")
        if not self.degenerate and not self.r1 < self.r2:
            raise ArgumentError(f"thresholds must satisfy r1 < r2, got {self.r1}, {self.r2}")

    @property
    def shape(self):
        return self.values.shape

    def to_dict(self) -> dict:
        return {"r1": self.r1, "r2": self.r2, "minimum": self.minimum, "degenerate": self.degenerate,
                "band_fraction": float(self.band.mean())}


def _all_minimum(shape, minimum: float, r1: float = 0.0, r2: float = 0.0) -> SliceMask:
    return SliceMask(np.full(shape, minimum, dtype=np.float32), np.zeros(shape, dtype=bool),
                     r1, r2, minimum, degenerate=True)


def middle_slice(pm, q_low: float = 60.0, q_high: float = 95.0, minimum: float = DEFAULT_MINIMUM) -> SliceMask:
    """Keep the open band (r1, r2) between two percentiles of the positive patch scores.

    The top slice is dropped with the noise floor. In-band pixels are scaled
    by the largest in-band score; without a usable band the mask is all
    ``minimum`` and flagged degenerate.
    """
    if not 0.0 <= q_low < q_high <= 100.0:
        raise ArgumentError(f"need 0 <= q_low < q_high <= 100, got {q_low}, {q_high}")
    if not 0.0 < minimum < 1.0:
        raise ArgumentError(f"minimum must lie in (0, 1), got {minimum}")
    positive = pm.grid_scores[pm.grid_scores > 0]
    if not positive.size:
        logger.warning("no positive priority scores; mask is all minimum")
        return _all_minimum(pm.scores.shape, minimum)
    r1, r2 = (float(v) for v in np.percentile(positive, [q_low, q_high]))
    band = (pm.scores > r1) & (pm.scores < r2)
    if not r1 < r2 or not band.any():
        logger.warning("empty priority band (r1=%.4g, r2=%.4g); mask is all minimum", r1, r2)
        return _all_minimum(pm.scores.shape, minimum, r1, r2)
    top = pm.scores[band].max()
    values = np.full(pm.scores.shape, minimum, dtype=np.float32)
    values[band] = np.maximum(pm.scores[band] / top, minimum)
    return SliceMask(values, band, r1, r2, minimum)


def aggregate_masks(masks: Sequence[SliceMask], rule: str = "mean") -> SliceMask:
    """Combine per-sample masks of one class; out-of-band locations count as 0."""
    if not masks:
        raise ArgumentError("aggregate_masks needs at least one mask")
    if rule not in AGGREGATE_RULES:
        raise ArgumentError(f"unknown aggregate rule {rule!r}; valid rules: {', '.join(AGGREGATE_RULES)}")
    shape = masks[0].shape
    if any(m.shape != shape for m in masks):
        raise DimensionError("masks to aggregate must share a shape")
    if len(masks) == 1:
        return masks[0]
    minimum = masks[0].minimum
    stacked = np.stack([np.where(m.band, m.values, 0.0) for m in masks])
    combined = stacked.mean(axis=0) if rule == "mean" else stacked.max(axis=0)
    band = np.any([m.band for m in masks], axis=0)
    usable = [m for m in masks if not m.degenerate]
    if not band.any() or not usable:
        return _all_minimum(shape, minimum)
    values = np.where(band, np.maximum(combined, minimum), minimum).astype(np.float32)
    r1 = float(np.mean([m.r1 for m in usable]))
    r2 = float(np.mean([m.r2 for m in usable]))
    return SliceMask(values, band, r1, r2, minimum)


def class_mask(
    model: Model,
    reference: Model,
    images: np.ndarray,
    patch: int = 4,
    stride: int = 4,
    fill: str = "mean",
    fill_value: Optional[Union[float, np.ndarray]] = None,
    q_low: float = 60.0,
    q_high: float = 95.0,
    minimum: float = DEFAULT_MINIMUM,
    rule: str = "mean",
) -> SliceMask:
    """Per-sample slice masks for ``images``, aggregated into one class mask."""
    masks = []
    for i, x in enumerate(np.asarray(images, dtype=np.float32)):
        variants = differential_variants(x, patch, stride, fill, fill_value)
        masks.append(middle_slice(priority_map(model, reference, x, variants, i), q_low, q_high, minimum))
    return aggregate_masks(masks, rule)
