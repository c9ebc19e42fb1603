"""Differential priority maps.

Each patch of a sample is occluded in turn. The score of a patch is how far
the suspect model's logits move minus how far the clean reference's move:
regions the suspect reacts to and the reference ignores score high.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from istr.errors import ArgumentError, DimensionError, ModelError
from istr.models.network import Model

FILL_RULES = ("mean", "zero")


@dataclass
class VariantSet:
    images: np.ndarray
    origins: List[Tuple[int, int]]
    patch: int
    stride: int
    grid: Tuple[int, int]

    def __len__(self) -> int:
        return len(self.images)


@dataclass
class PriorityMap:
    grid_scores: np.ndarray
    scores: np.ndarray
    patch: int
    stride: int
    sample: Optional[int] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.grid_scores)) or not np.all(np.isfinite(self.scores)):
            raise ArgumentError("priority scores must be finite")


def grid_origins(height: int, width: int, patch: int, stride: int) -> List[Tuple[int, int]]:
    if patch < 1 or patch > min(height, width):
        raise ArgumentError(f"patch size {patch} must lie in [1, {min(height, width)}]")
    if stride < 1:
        raise ArgumentError(f"stride must be positive, got {stride}")
    return [(top, left) for top in range(0, height - patch + 1, stride)
            for left in range(0, width - patch + 1, stride)]


def differential_variants(
    x: np.ndarray,
    patch: int = 4,
    stride: int = 4,
    fill: str = "mean",
    fill_value: Optional[Union[float, np.ndarray]] = None,
) -> VariantSet:
    """One copy of ``x`` per grid cell with that cell's patch replaced.

    ``mean`` fills with ``fill_value`` (the dataset's per-channel mean, as
    passed by the caller) or, if absent, the sample's own per-channel mean.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise DimensionError(f"expected a C×H×W sample, got shape {x.shape}")
    c, h, w = x.shape
    origins = grid_origins(h, w, patch, stride)
    if fill == "mean":
        value = x.mean(axis=(1, 2)) if fill_value is None else fill_value
        value = np.broadcast_to(np.asarray(value, dtype=np.float32).reshape(-1, 1, 1), (c, 1, 1))
    elif fill == "zero":
        value = np.zeros((c, 1, 1), dtype=np.float32)
    else:
        raise ArgumentError(f"unknown fill rule {fill!r}; valid rules: {', '.join(FILL_RULES)}")
    variants = np.repeat(x[None], len(origins), axis=0)
    for i, (top, left) in enumerate(origins):
        variants[i, :, top:top + patch, left:left + patch] = value
    rows = len(range(0, h - patch + 1, stride))
    return VariantSet(variants, origins, patch, stride, (rows, len(origins) // rows))


def _check_pair(model: Model, reference: Model) -> None:
    if model.input_shape != reference.input_shape or model.class_count != reference.class_count:
        raise ModelError(
            f"suspect model {model.input_shape}->{model.class_count} and reference "
            f"{reference.input_shape}->{reference.class_count} do not share shapes"
        )


def priority_map(
    model: Model, reference: Model, x: np.ndarray, variants: VariantSet, sample: Optional[int] = None
) -> PriorityMap:
    """Score every variant and spread the scores to pixels (max over covering patches)."""
    _check_pair(model, reference)
    x = np.asarray(x, dtype=np.float32)
    base = model.predict(x[None]).astype(np.float64)
    base_ref = reference.predict(x[None]).astype(np.float64)
    shift = np.linalg.norm(model.predict(variants.images).astype(np.float64) - base, axis=1)
    shift_ref = np.linalg.norm(reference.predict(variants.images).astype(np.float64) - base_ref, axis=1)
    scores = shift - shift_ref

    c, h, w = x.shape
    pixels = np.full((h, w), -np.inf)
    p = variants.patch
    for score, (top, left) in zip(scores, variants.origins):
        window = pixels[top:top + p, left:left + p]
        np.maximum(window, score, out=window)
    pixels[np.isneginf(pixels)] = 0.0
    return PriorityMap(scores.reshape(variants.grid), np.broadcast_to(pixels, (c, h, w)).copy(),
                       variants.patch, variants.stride, sample)
