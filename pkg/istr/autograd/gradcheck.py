"""Finite-difference validation of analytic gradients."""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from istr.autograd import ops
from istr.autograd.tensor import Tape, Tensor, backprop
from istr.errors import ArgumentError

logger = logging.getLogger(__name__)


@dataclass
class GradCheckResult:
    max_error: float
    checked: int
    skipped_kinks: int
    skipped_small: int
    worst: Optional[Tuple[str, int]] = None


def gradient_check(
    model,
    inp,
    epsilon: float = 1e-3,
    coords: int = 100,
    seed: int = 0,
    objective: Optional[Callable[[Tensor], Tensor]] = None,
    min_magnitude: float = 1e-5,
    kink_tol: float = 1e-3,
) -> GradCheckResult:
    """Compare backprop gradients with central differences on sampled coordinates.

    The model and input are promoted to float64. Without an explicit
    ``objective`` the scalar checked is a fixed seeded projection of the
    logits, so ReLU networks stay piecewise linear and central differences
    are exact away from kinks. A coordinate is a kink when its one-sided
    differences disagree by more than ``kink_tol`` (relative); kinks and
    coordinates whose gradient magnitude is below ``min_magnitude`` are
    excluded from sampling.
    """
    if not 0 < epsilon <= 1e-1:
        raise ArgumentError(f"epsilon must lie in (0, 0.1], got {epsilon}")
    rng = np.random.default_rng(seed)
    m64 = model.astype(np.float64)
    x = Tensor(np.asarray(inp, dtype=np.float64), requires_grad=True, dtype=np.float64)
    named: List[Tuple[str, Tensor]] = [("input", x)] + list(m64.named_parameters())
    for _, p in named:
        p.requires_grad = True

    if objective is None:
        projection = None

        def objective(out: Tensor) -> Tensor:
            nonlocal projection
            if projection is None:
                projection = rng.standard_normal(out.shape)
            return ops.sum(ops.mul(out, Tensor(projection, dtype=np.float64)))

    with Tape() as tape:
        loss = objective(m64.forward(x))
    backprop(tape, loss)

    def value() -> float:
        return float(objective(m64.forward(Tensor(x.data, dtype=np.float64))).data)

    f0 = value()
    sizes = np.array([p.size for _, p in named])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    order = rng.permutation(int(offsets[-1]))

    worst_err, worst = 0.0, None
    checked = kinks = small = 0
    for flat in order:
        if checked >= coords:
            break
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, tensor = named[which]
        idx = int(flat - offsets[which])
        original = tensor.data.flat[idx]
        tensor.data.flat[idx] = original + epsilon
        f_plus = value()
        tensor.data.flat[idx] = original - epsilon
        f_minus = value()
        tensor.data.flat[idx] = original

        d_plus = (f_plus - f0) / epsilon
        d_minus = (f0 - f_minus) / epsilon
        if abs(d_plus - d_minus) > kink_tol * max(abs(d_plus), abs(d_minus), 1e-8):
            kinks += 1
            continue
        numeric = (f_plus - f_minus) / (2 * epsilon)
        analytic = float(tensor.grad.flat[idx])
        if abs(analytic) < min_magnitude and abs(numeric) < min_magnitude:
            small += 1
            continue
        err = abs(analytic - numeric) / max(abs(analytic), 1e-8)
        checked += 1
        if err > worst_err:
            worst_err, worst = err, (name, idx)

    logger.debug(
        "gradient check: %d coords, max rel err %.3e, %d kinks, %d vanishing",
        checked, worst_err, kinks, small,
    )
    return GradCheckResult(worst_err, checked, kinks, small, worst)


def finite_difference_check(model, inp, epsilon: float = 1e-3, **kwargs) -> float:
    """Max relative error between analytic and central-difference gradients."""
    return gradient_check(model, inp, epsilon, **kwargs).max_error
