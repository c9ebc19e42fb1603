from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from istr.errors import ConfigError, DatasetError, DimensionError

PROVENANCES = ("clean", "poisoned", "stamped")
TRIGGER_KINDS = ("patch", "sine", "composite", "feature")
RELABEL_RULES = ("fixed", "source_specific")


@dataclass
class Dataset:
    """Labelled images, ``N×C×H×W`` float32 in [0, 1]."""
    images: np.ndarray
    labels: np.ndarray
    class_count: int
    provenance: str = "clean"
    name: str = ""
    poisoned: Optional[np.ndarray] = None
    feature: Optional[np.ndarray] = None

    def __post_init__(self):
        """Validate the arrays after initialization"""
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.images.ndim != 4:
            raise DatasetError(f"images must be N×C×H×W, got shape {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise DatasetError(f"{len(self.labels)} labels for {len(self.images)} images")
        if self.class_count < 1:
            raise DatasetError("class_count must be positive")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DatasetError(f"labels must lie in [0, {self.class_count})")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DatasetError("pixel values must lie in [0, 1]")
        if self.provenance not in PROVENANCES:
            raise DatasetError(f"unknown provenance {self.provenance!r}")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices, provenance: Optional[str] = None) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.images[indices], self.labels[indices], self.class_count,
            provenance or self.provenance, self.name,
            feature=None if self.feature is None else self.feature[indices],
        )

    def class_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)


@dataclass
class TriggerSpec:
    """An implanted trigger: ``x' = (1 − α·m)·x + α·m·p``."""
    kind: str
    mask: np.ndarray
    pattern: np.ndarray
    alpha: float = 1.0
    target_label: int = 0
    source_classes: Optional[Tuple[int, ...]] = None
    name: str = ""

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.float32)
        self.pattern = np.asarray(self.pattern, dtype=np.float32)
        if self.kind not in TRIGGER_KINDS:
            raise ConfigError(f"unknown trigger kind {self.kind!r}; valid kinds: {', '.join(TRIGGER_KINDS)}")
        if self.mask.ndim != 3 or self.mask.shape != self.pattern.shape:
            raise DimensionError(f"mask {self.mask.shape} and pattern {self.pattern.shape} must both be C×H×W")
        for label, arr in (("mask", self.mask), ("pattern", self.pattern)):
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ConfigError(f"trigger {label} values must lie in [0, 1]")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.source_classes is not None:
            self.source_classes = tuple(int(c) for c in self.source_classes)
        support = self.support.any(axis=0)
        if self.kind == "sine" and not support.all():
            raise ConfigError("a sine trigger must cover the full image")
        if self.kind == "patch" and support.any():
            rows, cols = np.flatnonzero(support.any(axis=1)), np.flatnonzero(support.any(axis=0))
            box = support[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
            if not box.all():
                raise ConfigError("a patch trigger mask must be a contiguous rectangle")

    @property
    def support(self) -> np.ndarray:
        return self.mask > 0

    def apply(self, images: np.ndarray) -> np.ndarray:
        """Stamp ``images`` (``N×C×H×W`` or ``C×H×W``); off-mask pixels are untouched."""
        images = np.asarray(images, dtype=np.float32)
        if images.shape[-3:] != self.mask.shape:
            raise DimensionError(f"trigger shape {self.mask.shape} does not match images {images.shape[-3:]}")
        weight = self.alpha * self.mask
        blended = (1.0 - weight) * images + weight * self.pattern
        return np.where(self.support, np.clip(blended, 0.0, 1.0), images).astype(np.float32)

    def additive(self) -> np.ndarray:
        """The trigger as an image on a black background (what APD compares against)."""
        return (self.alpha * self.mask * self.pattern).astype(np.float32)


@dataclass
class FeatureSpec:
    """Innocuous, class-independent feature for horizontal-class backdoors."""
    fraction: float = 0.3
    glyph: str = "arc"
    size: int = 7
    corner: str = "bottom-left"

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"feature fraction must lie in (0, 1], got {self.fraction}")


@dataclass
class PoisonConfig:
    trigger: TriggerSpec
    poison_rate: float = 0.1
    relabel: str = "fixed"
    target_map: Optional[Dict[int, int]] = None
    cover_rate: float = 0.0
    requires_feature: bool = False

    def __post_init__(self):
        if not 0.0 < self.poison_rate < 1.0:
            raise ConfigError(f"poison_rate must lie in (0, 1), got {self.poison_rate}")
        if self.relabel not in RELABEL_RULES:
            raise ConfigError(f"unknown relabel rule {self.relabel!r}; valid rules: {', '.join(RELABEL_RULES)}")
        if self.relabel == "source_specific" and not self.trigger.source_classes:
            raise ConfigError("source-specific relabelling needs a non-empty source_classes")
        if not 0.0 <= self.cover_rate < 1.0:
            raise ConfigError(f"cover_rate must lie in [0, 1), got {self.cover_rate}")

    def target_for(self, label: int) -> int:
        if self.target_map and label in self.target_map:
            return int(self.target_map[label])
        return int(self.trigger.target_label)

    def eligible(self, labels: np.ndarray) -> np.ndarray:
        """Samples this rule may poison: sources other than their own target."""
        targets = np.array([self.target_for(int(l)) for l in labels], dtype=np.int64)
        ok = labels != targets
        if self.relabel == "source_specific":
            ok &= np.isin(labels, self.trigger.source_classes)
        return ok

    def pairs(self, class_count: int) -> List[Tuple[int, int]]:
        """Ground-truth (source, target) pairs this rule implants."""
        if self.relabel == "source_specific":
            sources = self.trigger.source_classes
        else:
            sources = range(class_count)
        return [(int(m), self.target_for(int(m))) for m in sources if int(m) != self.target_for(int(m))]


@dataclass
class MutationResult:
    """One label-mutation run on one sample."""
    reverse_trigger: np.ndarray
    original_label: int
    flip_epoch: Optional[int] = None
    flipped_to: Optional[int] = None
    trace: List[int] = field(default_factory=list)
    target: Optional[int] = None

    def __post_init__(self):
        if (self.flip_epoch is None) != (self.flipped_to is None):
            raise ValueError("flip_epoch and flipped_to must be set together")
        if self.flipped_to is not None and self.flipped_to == self.original_label:
            raise ValueError("a flip must land on a label other than the original")

    @property
    def flipped(self) -> bool:
        return self.flip_epoch is not None


@dataclass
class ReverseTrigger:
    """A recovered trigger: additive ``delta`` or blended ``mask``/``pattern``."""
    source: int
    target: int
    delta: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    pattern: Optional[np.ndarray] = None
    method: str = "steps"

    def __post_init__(self):
        if self.delta is None and (self.mask is None or self.pattern is None):
            raise ValueError("a reverse trigger needs either delta or mask and pattern")

    def apply(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float32)
        if self.delta is not None:
            return np.clip(images + self.delta, 0.0, 1.0).astype(np.float32)
        return np.clip((1.0 - self.mask) * images + self.mask * self.pattern, 0.0, 1.0).astype(np.float32)

    def image(self) -> np.ndarray:
        if self.delta is not None:
            return self.delta.astype(np.float32)
        return (self.mask * self.pattern).astype(np.float32)
