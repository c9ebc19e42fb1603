"""Label mutation: how many signed-gradient steps it takes to flip a prediction.

A sample is perturbed additively. Every epoch the accumulated step
``U`` is masked by ``E`` and clamped, ``T = clip(x + U·E, 0, 1) − x``, so
the reverse trigger respects the mask at every recorded epoch. The
"opposite" variant pushes the sample away from its own label and needs a
single run however many classes exist; the unconstrained traversal
descends toward each other class in turn.

Two opposite objectives exist. ``label`` ascends the cross-entropy of the
sample's own label, which leans toward whichever class is already the
runner-up. ``spread`` descends the cross-entropy against a uniform
distribution over the other classes, so a class reachable through a small
shortcut gets the same pull as the natural neighbours.

With ``fraction`` set, each epoch moves only the ``fraction·D`` pixels
with the largest masked gradient that can still move in their descent
direction; with ``fraction`` None every pixel takes a signed step.
"""

import contextlib
import logging
import threading
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from istr.autograd import ops
from istr.autograd.tensor import Tape, Tensor, backprop
from istr.data_models import MutationResult
from istr.errors import ArgumentError, DimensionError
from istr.models.network import Model

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 100
DEFAULT_STEP = 0.05
DEFAULT_FRACTION = 0.02
DEFAULT_OBJECTIVE = "spread"
OBJECTIVES = ("spread", "label")


@dataclass
class RunCounter:
    """Tally of per-sample optimization runs and the epochs they spent."""
    runs: int = 0
    epochs: int = 0

    def __post_init__(self):
        self._lock = threading.Lock()

    def add(self, runs: int, epochs: int = 0) -> None:
        with self._lock:
            self.runs += runs
            self.epochs += epochs


def input_gradient(model: Model, images: np.ndarray, labels: np.ndarray):
    """Logits at ``images`` and ∂CE/∂images (summed loss, so rows stay independent)."""
    x = Tensor(images, requires_grad=True, dtype=model.parameters()[0].dtype)
    with Tape() as tape:
        logits = model.forward(x)
        loss = ops.softmax_cross_entropy(logits, labels, reduction="sum")
    backprop(tape, loss)
    return logits.data, x.grad


def spread_gradient(model: Model, images: np.ndarray, labels: np.ndarray):
    """Logits and ∂/∂images of the cross-entropy against uniform weight on every class but ``labels``."""
    dtype = model.parameters()[0].dtype
    x = Tensor(images, requires_grad=True, dtype=dtype)
    with Tape() as tape:
        logits = model.forward(x)
        weights = np.full(logits.shape, 1.0 / max(logits.shape[1] - 1, 1), dtype=dtype)
        weights[np.arange(len(labels)), labels] = 0.0
        loss = ops.neg(ops.sum(ops.mul(ops.log_softmax(logits), weights)))
    backprop(tape, loss)
    return logits.data, x.grad


def _frozen(model: Model):
    if any(p.requires_grad for p in model.parameters()):
        return model.frozen()
    return contextlib.nullcontext(model)


def _check(budget: int, step_size: float, fraction: Optional[float] = None, objective: str = DEFAULT_OBJECTIVE) -> None:
    if budget <= 0:
        raise ArgumentError(f"step budget must be positive, got {budget}")
    if step_size <= 0:
        raise ArgumentError(f"step_size must be positive, got {step_size}")
    if fraction is not None and not 0.0 < fraction <= 1.0:
        raise ArgumentError(f"fraction must lie in (0, 1], got {fraction}")
    if objective not in OBJECTIVES:
        raise ArgumentError(f"unknown objective {objective!r}; valid objectives: {', '.join(OBJECTIVES)}")


def _broadcast_masks(masks: Optional[np.ndarray], images: np.ndarray) -> np.ndarray:
    if masks is None:
        return np.ones_like(images)
    masks = np.asarray(masks, dtype=images.dtype)
    if masks.shape == images.shape[1:]:
        return np.broadcast_to(masks, images.shape)
    if masks.shape != images.shape:
        raise DimensionError(f"mask shape {masks.shape} does not match images {images.shape}")
    return masks


def _sparse_step(descent: np.ndarray, current: np.ndarray, masks: np.ndarray, fraction: float) -> np.ndarray:
    """Sign of ``descent`` on the top ``fraction`` of movable pixels per row, zero elsewhere."""
    n = len(descent)
    flat = descent.reshape(n, -1)
    cur = current.reshape(n, -1)
    movable = ((flat > 0) & (cur < 1.0)) | ((flat < 0) & (cur > 0.0))
    score = np.where(movable, np.abs(flat) * masks.reshape(n, -1), 0.0)
    k = max(1, int(round(fraction * flat.shape[1])))
    # stable sort: lower pixel index wins ties
    top = np.argsort(-score, axis=1, kind="stable")[:, :k]
    picked = np.zeros_like(score, dtype=bool)
    np.put_along_axis(picked, top, True, axis=1)
    picked &= score > 0
    return np.where(picked, np.sign(flat), 0.0).reshape(descent.shape)


def _mutate(
    model: Model,
    images: np.ndarray,
    labels: np.ndarray,
    aims: np.ndarray,
    masks: np.ndarray,
    budget: int,
    step_size: float,
    toward: bool,
    fraction: Optional[float] = None,
    objective: str = "label",
) -> List[MutationResult]:
    """Run one mutation per row; rows stop independently at their first flip.

    With ``toward`` false each row moves away from ``aims`` (its own label)
    under ``objective`` and flips when the argmax leaves it; with ``toward``
    true it descends toward ``aims`` and flips when the argmax reaches it.
    """
    n = len(images)
    u = np.zeros_like(images)
    t = np.zeros_like(images)
    flip_epoch: List[Optional[int]] = [None] * n
    flipped_to: List[Optional[int]] = [None] * n
    traces: List[List[int]] = [[] for _ in range(n)]
    active = np.arange(n)

    for epoch in range(budget + 1):
        current = images[active] + t[active]
        if toward:
            logits, grad = input_gradient(model, current, aims[active])
            descent = -grad
        elif objective == "spread":
            logits, grad = spread_gradient(model, current, aims[active])
            descent = -grad
        else:
            logits, descent = input_gradient(model, current, aims[active])
        predictions = logits.argmax(axis=1)
        if epoch > 0:
            done = predictions == aims[active] if toward else predictions != labels[active]
            for row, pred, hit in zip(active, predictions, done):
                traces[row].append(int(pred))
                if hit:
                    flip_epoch[row], flipped_to[row] = epoch, int(pred)
            keep = ~done
            active, descent, current = active[keep], descent[keep], current[keep]
        if epoch == budget or not len(active):
            break
        if fraction is None:
            move = np.sign(descent)
        else:
            move = _sparse_step(descent, current, masks[active], fraction)
        u[active] = np.clip(u[active] + step_size * move, -1.0, 1.0)
        x = images[active]
        t[active] = np.clip(x + u[active] * masks[active], 0.0, 1.0) - x

    return [
        MutationResult(t[i].copy(), int(labels[i]), flip_epoch[i], flipped_to[i], traces[i],
                       int(aims[i]) if toward else None)
        for i in range(n)
    ]


def steps_opposite_batch(
    model: Model,
    images: np.ndarray,
    labels: np.ndarray,
    masks: Optional[np.ndarray] = None,
    budget: int = DEFAULT_BUDGET,
    step_size: float = DEFAULT_STEP,
    counter: Optional[RunCounter] = None,
    fraction: Optional[float] = DEFAULT_FRACTION,
    objective: str = DEFAULT_OBJECTIVE,
) -> List[MutationResult]:
    """Opposite mutation for a batch; one run per sample."""
    _check(budget, step_size, fraction, objective)
    images = np.asarray(images, dtype=model.parameters()[0].dtype)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        return []
    masks = _broadcast_masks(masks, images)
    with _frozen(model):
        results = _mutate(model, images, labels, labels, masks, budget, step_size, False, fraction, objective)
    if counter is not None:
        counter.add(len(results), sum(r.flip_epoch or budget for r in results))
    return results


def steps_opposite(
    model: Model,
    x: np.ndarray,
    label: int,
    mask: Optional[np.ndarray] = None,
    budget: int = DEFAULT_BUDGET,
    step_size: float = DEFAULT_STEP,
    counter: Optional[RunCounter] = None,
    fraction: Optional[float] = DEFAULT_FRACTION,
    objective: str = DEFAULT_OBJECTIVE,
) -> MutationResult:
    """Push ``x`` away from ``label`` until the prediction changes or ``budget`` runs out."""
    x = np.asarray(x)
    batch_mask = None if mask is None else np.asarray(mask)[None]
    return steps_opposite_batch(model, x[None], np.array([label]), batch_mask, budget, step_size, counter,
                                fraction, objective)[0]


def steps_unconstrained(
    model: Model,
    x: np.ndarray,
    label: int,
    mask: Optional[np.ndarray] = None,
    budget: int = DEFAULT_BUDGET,
    step_size: float = DEFAULT_STEP,
    counter: Optional[RunCounter] = None,
    fraction: Optional[float] = DEFAULT_FRACTION,
) -> Dict[int, MutationResult]:
    """Targeted descent toward every class other than ``label`` (C−1 runs)."""
    _check(budget, step_size, fraction)
    targets = np.array([c for c in range(model.class_count) if c != label], dtype=np.int64)
    if not len(targets):
        return {}
    x = np.asarray(x, dtype=model.parameters()[0].dtype)
    images = np.repeat(x[None], len(targets), axis=0)
    masks = _broadcast_masks(None if mask is None else np.asarray(mask), images)
    labels = np.full(len(targets), label, dtype=np.int64)
    with _frozen(model):
        results = _mutate(model, images, labels, targets, masks, budget, step_size, True, fraction)
    if counter is not None:
        counter.add(len(results), sum(r.flip_epoch or budget for r in results))
    return {int(t): r for t, r in zip(targets, results)}


def earliest_flip(per_target: Dict[int, MutationResult]) -> Optional[MutationResult]:
    """The target reached first (lower class id on ties); None if nothing flipped."""
    flipped = [(r.flip_epoch, t) for t, r in per_target.items() if r.flipped]
    if not flipped:
        return None
    return per_target[min(flipped)[1]]
