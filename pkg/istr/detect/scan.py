import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from istr import settings
from istr.data_models import Dataset, MutationResult
from istr.detect.steps import (
    DEFAULT_BUDGET, DEFAULT_FRACTION, DEFAULT_OBJECTIVE, DEFAULT_STEP, RunCounter, _check, _frozen, earliest_flip,
    steps_opposite_batch, steps_unconstrained,
)
from istr.errors import ArgumentError, FormatError
from istr.models.network import Model

logger = logging.getLogger(__name__)

MaskProvider = Union[None, np.ndarray, Dict[int, np.ndarray], Callable[[int], Optional[np.ndarray]]]
SCAN_MODES = ("opposite", "traversal")
CHUNK = 64


@dataclass
class LeadMatrix:
    """``counts[m, n]``: scanned class-m samples whose mutation flipped to n."""
    counts: np.ndarray
    scanned: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.scanned = np.asarray(self.scanned, dtype=np.int64)
        c = len(self.scanned)
        if self.counts.shape != (c, c):
            raise ArgumentError(f"lead counts must be {c}x{c}, got {self.counts.shape}")
        if np.any(np.diag(self.counts)):
            raise ArgumentError("a lead matrix has a zero diagonal")
        if np.any(self.counts.sum(axis=1) > self.scanned):
            raise ArgumentError("a lead row exceeds the samples scanned for its class")

    @classmethod
    def empty(cls, class_count: int) -> "LeadMatrix":
        return cls(np.zeros((class_count, class_count)), np.zeros(class_count))

    @property
    def class_count(self) -> int:
        return len(self.scanned)

    def totals(self) -> np.ndarray:
        """``Lead(m)``: flips out of each class."""
        return self.counts.sum(axis=1)

    def rates(self) -> np.ndarray:
        """Converged mutation rate per class (0 for classes with nothing scanned)."""
        return np.divide(self.totals(), self.scanned, out=np.zeros(self.class_count), where=self.scanned > 0)

    def merge(self, other: "LeadMatrix") -> "LeadMatrix":
        return LeadMatrix(self.counts + other.counts, self.scanned + other.scanned)

    def to_dict(self) -> dict:
        return {"counts": self.counts.tolist(), "scanned": self.scanned.tolist()}


@dataclass
class ScanResult:
    """Per-sample outcome of a scan, ordered by position in the scanned set."""
    lead: LeadMatrix
    indices: np.ndarray
    labels: np.ndarray
    flip_epochs: np.ndarray  # 0 where the sample never flipped
    flipped_to: np.ndarray  # -1 where the sample never flipped
    triggers: np.ndarray
    budget: int
    step_size: float
    mode: str = "opposite"
    runs: int = 0
    params: Dict[str, object] = field(default_factory=dict)
    fraction: Optional[float] = None
    objective: str = "label"

    @property
    def class_count(self) -> int:
        return self.lead.class_count

    def mutation_rates(self) -> np.ndarray:
        """``rates[m, s−1]``: fraction of scanned class-m samples flipped by epoch s."""
        c = self.class_count
        hits = np.zeros((c, self.budget + 1), dtype=np.int64)
        flipped = self.flip_epochs > 0
        np.add.at(hits, (self.labels[flipped], self.flip_epochs[flipped]), 1)
        cumulative = np.cumsum(hits, axis=1)[:, 1:]
        scanned = self.lead.scanned[:, None]
        return np.divide(cumulative, scanned, out=np.zeros(cumulative.shape), where=scanned > 0)

    def pair_trigger(self, source: int, target: int) -> Optional[np.ndarray]:
        """Mean reverse trigger of the class-``source`` samples that flipped to ``target``."""
        rows = (self.labels == source) & (self.flipped_to == target)
        if not rows.any():
            return None
        return self.triggers[rows].mean(axis=0).astype(np.float32)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            np.savez_compressed(
                f, counts=self.lead.counts, scanned=self.lead.scanned, indices=self.indices,
                labels=self.labels, flip_epochs=self.flip_epochs, flipped_to=self.flipped_to,
                triggers=self.triggers, budget=self.budget, step_size=self.step_size,
                mode=self.mode, runs=self.runs, objective=self.objective,
                fraction=np.nan if self.fraction is None else self.fraction,
            )
        return path

    @classmethod
    def load(cls, path) -> "ScanResult":
        try:
            with np.load(path, allow_pickle=False) as data:
                fraction = float(data["fraction"])
                return cls(
                    LeadMatrix(data["counts"], data["scanned"]), data["indices"], data["labels"],
                    data["flip_epochs"], data["flipped_to"], data["triggers"], int(data["budget"]),
                    float(data["step_size"]), str(data["mode"]), int(data["runs"]),
                    fraction=None if np.isnan(fraction) else fraction, objective=str(data["objective"]),
                )
        except (KeyError, ValueError, OSError) as e:
            raise FormatError(f"cannot read scan dump {path}: {e}")


def _resolve_masks(provider: MaskProvider, labels: np.ndarray, shape) -> Optional[np.ndarray]:
    if provider is None:
        return None
    if isinstance(provider, np.ndarray):
        return provider
    lookup = provider.get if isinstance(provider, dict) else provider
    masks = []
    for label in labels:
        mask = lookup(int(label))
        masks.append(np.ones(shape, dtype=np.float32) if mask is None else mask)
    return np.stack(masks)


def _select(dataset: Dataset, correct: np.ndarray, classes: Optional[Sequence[int]],
            max_per_class: Optional[int], seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    chosen = []
    for label in range(dataset.class_count):
        if classes is not None and label not in classes:
            continue
        idx = np.flatnonzero(correct & (dataset.labels == label))
        if max_per_class is not None and len(idx) > max_per_class:
            idx = np.sort(rng.choice(idx, size=max_per_class, replace=False))
        chosen.append(idx)
    return np.sort(np.concatenate(chosen)) if chosen else np.empty(0, dtype=np.int64)


def detect_scan(
    model: Model,
    dataset: Dataset,
    masks: MaskProvider = None,
    budget: int = DEFAULT_BUDGET,
    step_size: float = DEFAULT_STEP,
    seed: int = 0,
    mode: str = "opposite",
    max_per_class: Optional[int] = None,
    classes: Optional[Sequence[int]] = None,
    threads: Optional[int] = None,
    fraction: Optional[float] = DEFAULT_FRACTION,
    objective: str = DEFAULT_OBJECTIVE,
) -> ScanResult:
    """Mutate every correctly classified sample of ``dataset`` and tally the flips.

    ``masks`` is a shared C×H×W mask, a per-class dict or a callable from
    class id to mask (None: unconstrained). ``fraction`` and ``objective``
    select the mutation rule (see :mod:`istr.detect.steps`); traversal always
    descends toward each target. Work is split into chunks that
    run on up to ``threads`` workers and are merged in sample order.
    """
    if len(dataset) == 0:
        raise ArgumentError("cannot scan an empty dataset")
    if mode not in SCAN_MODES:
        raise ArgumentError(f"unknown scan mode {mode!r}; valid modes: {', '.join(SCAN_MODES)}")
    if max_per_class is not None and max_per_class < 1:
        raise ArgumentError(f"max_per_class must be positive, got {max_per_class}")
    _check(budget, step_size, fraction, objective)
    threads = threads or settings.threads()
    counter = RunCounter()

    with _frozen(model):
        correct = model.classify(dataset.images) == dataset.labels
        indices = _select(dataset, correct, classes, max_per_class, seed)
        logger.info("scanning %d of %d samples (%s, budget %d)", len(indices), len(dataset), mode, budget)

        def work(chunk: np.ndarray) -> List[MutationResult]:
            images, labels = dataset.images[chunk], dataset.labels[chunk]
            chunk_masks = _resolve_masks(masks, labels, dataset.image_shape)
            if mode == "opposite":
                return steps_opposite_batch(model, images, labels, chunk_masks, budget, step_size, counter,
                                            fraction, objective)
            out = []
            for i, (x, label) in enumerate(zip(images, labels)):
                mask = None if chunk_masks is None else (chunk_masks if chunk_masks.ndim == 3 else chunk_masks[i])
                per_target = steps_unconstrained(model, x, int(label), mask, budget, step_size, counter, fraction)
                first = earliest_flip(per_target)
                if first is None:
                    last = per_target[max(per_target)] if per_target else None
                    trigger = last.reverse_trigger if last else np.zeros_like(x)
                    out.append(MutationResult(trigger, int(label)))
                else:
                    out.append(MutationResult(first.reverse_trigger, int(label), first.flip_epoch,
                                              first.flipped_to, first.trace, first.target))
            return out

        chunks = [indices[i:i + CHUNK] for i in range(0, len(indices), CHUNK)]
        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                batches = list(pool.map(work, chunks))
        else:
            batches = [work(chunk) for chunk in chunks]
    results = [r for batch in batches for r in batch]

    c = dataset.class_count
    counts = np.zeros((c, c), dtype=np.int64)
    scanned = np.bincount(dataset.labels[indices], minlength=c)
    flip_epochs = np.zeros(len(indices), dtype=np.int64)
    flipped_to = np.full(len(indices), -1, dtype=np.int64)
    for i, r in enumerate(results):
        if r.flipped:
            counts[r.original_label, r.flipped_to] += 1
            flip_epochs[i], flipped_to[i] = r.flip_epoch, r.flipped_to
    triggers = (np.stack([r.reverse_trigger for r in results]) if results
                else np.zeros((0,) + dataset.image_shape, dtype=np.float32))
    lead = LeadMatrix(counts, scanned)
    logger.info("scan done: %d flips over %d samples, %d runs", int(counts.sum()), len(indices), counter.runs)
    return ScanResult(lead, indices, dataset.labels[indices], flip_epochs, flipped_to, triggers,
                      budget, step_size, mode, counter.runs,
                      {"seed": seed, "max_per_class": max_per_class, "masked": masks is not None},
                      fraction, objective)
