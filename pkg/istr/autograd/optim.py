from typing import List, Optional, Sequence

import numpy as np

from istr.autograd.tensor import Tensor
from istr.errors import ArgumentError, DimensionError


def sgd_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    lr: float,
    momentum: float = 0.0,
    velocities: Optional[List[np.ndarray]] = None,
) -> List[np.ndarray]:
    """Apply ``v ← momentum·v + g; p ← p − lr·v`` in place and return the velocities.

    A missing gradient counts as zero.
    """
    if lr <= 0:
        raise ArgumentError(f"learning rate must be positive, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ArgumentError(f"momentum must lie in [0, 1), got {momentum}")
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    if velocities is None:
        velocities = [np.zeros_like(p.data) for p in params]

    updated = []
    for p, g, v in zip(params, grads, velocities):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or v.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        v = momentum * v + g if momentum else np.array(g, dtype=p.dtype)
        p.data -= (lr * v).astype(p.dtype)
        updated.append(v.astype(p.dtype))
    return updated


class SGD:
    """Stochastic gradient descent with heavy-ball momentum."""

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.0):
        if lr <= 0:
            raise ArgumentError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        grads = [p.grad for p in self.params]
        self.velocities = sgd_step(self.params, grads, self.lr, self.momentum, self.velocities)
