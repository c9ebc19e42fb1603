"""Unlearning: fine-tune on reverse-trigger-stamped samples labelled with their source class."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from istr.data_models import Dataset, ReverseTrigger
from istr.errors import ArgumentError, StateError
from istr.models.network import Model
from istr.models.training import TrainHistory, evaluate, train

logger = logging.getLogger(__name__)

Pair = Tuple[int, int]
Stamper = Callable[[np.ndarray, Pair], np.ndarray]


def _split(count: int, parts: int) -> List[int]:
    base, extra = divmod(count, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def build_unlearn_set(
    clean: Dataset,
    triggers: Mapping[Pair, ReverseTrigger],
    pairs: Sequence[Pair],
    mix: float = 0.2,
    seed: int = 0,
) -> Dataset:
    """``clean`` plus ``round(mix·N)`` source-class samples stamped with their pair's reverse trigger.

    Stamped samples keep their source label, never the target.
    """
    if not 0.0 <= mix <= 1.0:
        raise ArgumentError(f"mix must lie in [0, 1], got {mix}")
    usable = [tuple(p) for p in pairs if tuple(p) in triggers]
    if not usable:
        raise StateError("no reverse triggers available for the pairs to unlearn")
    count = int(round(mix * len(clean)))
    if count == 0:
        return clean

    rng = np.random.default_rng(seed)
    images, labels = [clean.images], [clean.labels]
    for (source, target), share in zip(usable, _split(count, len(usable))):
        pool = clean.class_indices(source)
        if not len(pool) or not share:
            if share:
                logger.warning("class %d has no clean samples to stamp for pair (%d, %d)", source, source, target)
            continue
        idx = rng.choice(pool, size=share, replace=share > len(pool))
        images.append(triggers[(source, target)].apply(clean.images[idx]))
        labels.append(np.full(share, source, dtype=np.int64))
    merged = Dataset(np.concatenate(images), np.concatenate(labels), clean.class_count, "stamped", clean.name)
    logger.info("unlearning set: %d clean + %d stamped samples", len(clean), len(merged) - len(clean))
    return merged


def unlearn_finetune(
    model: Model,
    unlearn_set: Dataset,
    epochs: int = 5,
    lr: float = 0.01,
    batch_size: int = 64,
    seed: int = 0,
) -> Tuple[Model, TrainHistory]:
    """Fine-tune a copy of ``model``; the original is left untouched."""
    repaired = model.clone()
    repaired.metadata["repaired"] = "true"
    return train(repaired, unlearn_set, epochs, lr=lr, batch_size=batch_size, seed=seed)


def stamped_test_sets(test: Dataset, pairs: Sequence[Pair], stamper: Stamper) -> Dict[Pair, Dataset]:
    """Per pair: the source-class test samples stamped by ``stamper``, original labels kept."""
    out: Dict[Pair, Dataset] = {}
    for source, target in pairs:
        idx = test.class_indices(source)
        if not len(idx):
            logger.warning("no test samples of class %d for pair (%d, %d)", source, source, target)
            continue
        images = stamper(test.images[idx], (source, target))
        out[(source, target)] = Dataset(images, test.labels[idx], test.class_count, "stamped", test.name)
    return out


def attack_success(model: Model, stamped: Dataset, target: int) -> float:
    if len(stamped) == 0:
        raise ArgumentError("cannot measure attack success on an empty set")
    return float(np.mean(model.classify(stamped.images) == target))


def measure(model: Model, clean_test: Dataset, stamped: Mapping[Pair, Dataset]) -> Tuple[float, Dict[Pair, float]]:
    """Clean accuracy (NSR) and per-pair ASR."""
    nsr = evaluate(model, clean_test).accuracy
    return nsr, {pair: attack_success(model, data, pair[1]) for pair, data in stamped.items()}


@dataclass
class RepairReport:
    pairs: List[Pair]
    nsr_before: float
    nsr_after: float
    asr_before: Dict[Pair, float] = field(default_factory=dict)
    asr_after: Dict[Pair, float] = field(default_factory=dict)
    params: Dict[str, object] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"source": m, "target": n, "asr_before": self.asr_before.get((m, n)),
              "asr_after": self.asr_after.get((m, n))} for m, n in self.pairs],
            columns=["source", "target", "asr_before", "asr_after"],
        )

    def to_dict(self) -> dict:
        return {
            "nsr_before": self.nsr_before,
            "nsr_after": self.nsr_after,
            "params": dict(self.params),
            "pairs": [
                {"source": m, "target": n, "asr_before": self.asr_before.get((m, n)),
                 "asr_after": self.asr_after.get((m, n))}
                for m, n in self.pairs
            ],
        }


def verify_repair(
    original: Model,
    repaired: Model,
    clean_test: Dataset,
    stamped: Mapping[Pair, Dataset],
    pairs: Optional[Sequence[Pair]] = None,
) -> RepairReport:
    """ASR per pair and clean accuracy, before and after repair."""
    pairs = [tuple(p) for p in (pairs if pairs is not None else stamped.keys()) if tuple(p) in stamped]
    chosen = {p: stamped[p] for p in pairs}
    nsr_before, asr_before = measure(original, clean_test, chosen)
    nsr_after, asr_after = measure(repaired, clean_test, chosen)
    for p in pairs:
        logger.info("pair %s: ASR %.4f -> %.4f", p, asr_before[p], asr_after[p])
    logger.info("clean accuracy %.4f -> %.4f", nsr_before, nsr_after)
    return RepairReport(pairs, nsr_before, nsr_after, asr_before, asr_after)
