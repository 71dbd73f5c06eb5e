"""Overlapping random crops and timestamp masking.

Two views of a series x are x[a1:b1] and x[a2:b2] with
0 <= a1 <= a2 < b1 <= b2 <= T; the losses compare only the shared
segment [a2, b1).
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import tensor as tn
from .errors import ConfigurationError


@dataclass(frozen=True)
class CropPair:
    a1: int
    a2: int
    b1: int
    b2: int

    @property
    def overlap(self) -> int:
        return self.b1 - self.a2

    def views(self, x: np.ndarray, axis: int = -2) -> tuple[np.ndarray, np.ndarray]:
        """Slice both views out of ``x`` along the time axis."""
        sl1 = [slice(None)] * x.ndim
        sl2 = [slice(None)] * x.ndim
        sl1[axis] = slice(self.a1, self.b1)
        sl2[axis] = slice(self.a2, self.b2)
        return x[tuple(sl1)], x[tuple(sl2)]

    def overlap_slices(self) -> tuple[slice, slice]:
        """Where the shared segment sits inside the first and second view."""
        return (slice(self.a2 - self.a1, self.b1 - self.a1), slice(0, self.b1 - self.a2))

    def is_valid(self, T: int) -> bool:
        return 0 <= self.a1 <= self.a2 < self.b1 <= self.b2 <= T


def sample_crop_pair(T: int, rng: np.random.Generator) -> CropPair:
    """Draw uniformly from all valid crop pairs of a length-T series.

    Valid tuples are in bijection with 4-subsets c0<c1<c2<c3 of {0..T+2}
    via (a1, a2, b1, b2) = (c0, c1-1, c2-1, c3-2), so one draw without
    replacement gives an exactly uniform pair.
    """
    if T < 2:
        raise ConfigurationError(f"crop needs T >= 2, got {T}")
    c = np.sort(rng.choice(T + 3, size=4, replace=False))
    return CropPair(int(c[0]), int(c[1]) - 1, int(c[2]) - 1, int(c[3]) - 2)


def all_crop_pairs(T: int) -> list[CropPair]:
    """Every valid pair; for tests and small-T enumeration."""
    return [CropPair(c0, c1 - 1, c2 - 1, c3 - 2) for c0, c1, c2, c3 in combinations(range(T + 3), 4)]


def timestamp_mask(h, p: float, rng: np.random.Generator):
    """Zero whole timestamp vectors of ``h`` (..., T, H) independently with probability p."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"mask probability must be in [0, 1), got {p}")
    h = tn.as_tensor(h)
    if p == 0.0:
        return h
    keep = rng.random(h.shape[:-1]) >= p
    return tn.mask(h, keep[..., None])
