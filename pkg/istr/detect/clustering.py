from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

MAX_ITERATIONS = 100


@dataclass
class TwoMeans:
    lower: np.ndarray
    upper: np.ndarray
    centroids: Tuple[float, float]
    iterations: int

    @property
    def assignment(self) -> np.ndarray:
        """1 for members of the upper cluster, 0 otherwise."""
        out = np.zeros(len(self.lower) + len(self.upper), dtype=np.int64)
        out[self.upper] = 1
        return out


def kmeans2(values: Sequence[float]) -> TwoMeans:
    """1-D Lloyd iterations with k=2, initialized at the extremes.

    Points equidistant from both centroids join the lower cluster. When all
    values are equal the upper cluster is empty.
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ValueError("kmeans2 needs at least one value")
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        return TwoMeans(np.arange(v.size), np.empty(0, dtype=np.int64), (lo, hi), 0)

    upper = np.abs(v - hi) < np.abs(v - lo)
    iterations = 0
    while iterations < MAX_ITERATIONS:
        iterations += 1
        lo = float(v[~upper].mean()) if (~upper).any() else lo
        hi = float(v[upper].mean()) if upper.any() else hi
        updated = np.abs(v - hi) < np.abs(v - lo)
        if np.array_equal(updated, upper):
            break
        upper = updated
    return TwoMeans(np.flatnonzero(~upper), np.flatnonzero(upper), (lo, hi), iterations)
