"""Mask-and-pattern trigger inversion with an L1 penalty on the mask.

This is the class-traversal style of inversion: one optimization per
(source, target) pair, so covering every pair costs C−1 runs per source
sample where the opposite mutation needs one.
"""

import logging
from typing import Dict, Optional, Tuple

import numpy as np

from istr.autograd import SGD, ops
from istr.autograd.tensor import Tape, Tensor, backprop
from istr.data_models import Dataset, ReverseTrigger
from istr.detect.steps import RunCounter, _frozen
from istr.errors import ArgumentError
from istr.models.network import Model

logger = logging.getLogger(__name__)


def baseline_l1_inversion(
    model: Model,
    images: np.ndarray,
    source: int,
    target: int,
    weight: float = 1e-3,
    budget: int = 100,
    lr: float = 0.1,
    seed: int = 0,
    counter: Optional[RunCounter] = None,
) -> ReverseTrigger:
    """Optimize ``x' = (1 − m)·x + m·p`` toward ``target`` plus ``weight·|m|₁``.

    ``m`` (1×H×W, shared over channels) and ``p`` are squashed through a
    sigmoid so both stay in [0, 1].
    """
    if source == target:
        raise ArgumentError("source and target must differ")
    if budget <= 0:
        raise ArgumentError(f"budget must be positive, got {budget}")
    images = np.asarray(images, dtype=np.float32)
    if len(images) == 0:
        raise ArgumentError(f"no samples of class {source} to invert from")
    c, h, w = images.shape[1:]
    rng = np.random.default_rng(seed)
    mask_raw = Tensor(rng.normal(0.0, 0.1, size=(1, h, w)) - 3.0, requires_grad=True, dtype=np.float32)
    pattern_raw = Tensor(rng.normal(0.0, 0.1, size=(c, h, w)), requires_grad=True, dtype=np.float32)
    opt = SGD([mask_raw, pattern_raw], lr, momentum=0.9)
    labels = np.full(len(images), target, dtype=np.int64)
    x = Tensor(images)

    with _frozen(model):
        for _ in range(budget):
            with Tape() as tape:
                mask = ops.sigmoid(mask_raw)
                pattern = ops.sigmoid(pattern_raw)
                stamped = ops.add(ops.mul(ops.sub(1.0, mask), x), ops.mul(mask, pattern))
                loss = ops.softmax_cross_entropy(model.forward(stamped), labels)
                if weight > 0:
                    loss = ops.add(loss, ops.mul(weight, ops.sum(mask)))
            backprop(tape, loss)
            opt.step()

    if counter is not None:
        counter.add(len(images), budget * len(images))
    mask = ops.sigmoid(mask_raw).data
    pattern = ops.sigmoid(pattern_raw).data
    return ReverseTrigger(source, target, mask=np.broadcast_to(mask, (c, h, w)).astype(np.float32),
                          pattern=pattern.astype(np.float32), method="l1")


def l1_traversal(
    model: Model,
    dataset: Dataset,
    weight: float = 1e-3,
    budget: int = 100,
    lr: float = 0.1,
    seed: int = 0,
    max_per_class: int = 20,
    counter: Optional[RunCounter] = None,
) -> Dict[Tuple[int, int], ReverseTrigger]:
    """Invert every (source, target) pair; the baseline's full detection cost."""
    counter = counter if counter is not None else RunCounter()
    out: Dict[Tuple[int, int], ReverseTrigger] = {}
    for source in range(dataset.class_count):
        idx = dataset.class_indices(source)[:max_per_class]
        if not len(idx):
            continue
        for target in range(dataset.class_count):
            if target != source:
                out[(source, target)] = baseline_l1_inversion(
                    model, dataset.images[idx], source, target, weight, budget, lr, seed, counter
                )
    logger.info("l1 traversal: %d pairs, %d runs", len(out), counter.runs)
    return out
