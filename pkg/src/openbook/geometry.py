"""The open book O(d, K) as a metric space.

K >= 3 closed half-spaces [0, inf) x R^d glued along their boundary
hyperplane (the spine). A point is stored in canonical form: anything at
distance zero from the spine is a spine point and carries no leaf label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SPINE = 0


@dataclass(frozen=True)
class BookShape:
    """Spine dimension ``d`` and leaf count ``K``."""

    d: int
    K: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 0:
            raise ValueError(f"spine dimension must be a nonnegative integer, got {self.d}")
        if int(self.K) != self.K or self.K < 3:
            raise ValueError(f"K >= 3 required, got K={self.K}")

    def check_leaf(self, k: int) -> int:
        if not 1 <= k <= self.K:
            raise IndexError(f"leaf index {k} out of range 1..{self.K}")
        return int(k)


@dataclass(frozen=True)
class BookPoint:
    """A point of the open book.

    ``leaf == 0`` marks a spine point (then ``x0 == 0``); otherwise the point
    lies in the open leaf ``leaf`` at distance ``x0 > 0`` from the spine.
    ``y`` holds the d spine coordinates.
    """

    shape: BookShape
    leaf: int
    x0: float
    y: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "y", tuple(float(v) for v in self.y))
        object.__setattr__(self, "x0", float(self.x0))
        if len(self.y) != self.shape.d:
            raise ValueError(f"expected {self.shape.d} spine coordinates, got {len(self.y)}")
        if self.leaf == SPINE:
            if self.x0 != 0.0:
                raise ValueError("spine points must have x0 == 0")
            # normalise -0.0
            object.__setattr__(self, "x0", 0.0)
        else:
            self.shape.check_leaf(self.leaf)
            if not self.x0 > 0.0:
                raise ValueError(f"leaf points need x0 > 0, got {self.x0}; use BookPoint.spine")

    @classmethod
    def spine(cls, shape: BookShape, y: Sequence[float] = ()) -> BookPoint:
        return cls(shape, SPINE, 0.0, tuple(y))

    @classmethod
    def on_leaf(cls, shape: BookShape, k: int, x0: float, y: Sequence[float] = ()) -> BookPoint:
        """Build a point from leaf coordinates; ``x0 == 0`` lands on the spine."""
        if x0 < 0:
            raise ValueError(f"distance to spine must be nonnegative, got {x0}")
        if x0 == 0:
            return cls.spine(shape, y)
        return cls(shape, shape.check_leaf(k), x0, tuple(y))

    @property
    def is_spine(self) -> bool:
        return self.leaf == SPINE

    @property
    def coords(self) -> np.ndarray:
        """Leaf-local coordinates (x0, y) as a length d+1 array."""
        return np.array((self.x0,) + self.y, dtype=float)

    def __repr__(self):
        if self.is_spine:
            return f"Spine({self.y})"
        return f"Leaf({self.leaf}, {self.x0!r}, {self.y})"


def _same_shape(p: BookPoint, q: BookPoint) -> None:
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")


def distance(p: BookPoint, q: BookPoint) -> float:
    """Geodesic distance: Euclidean within a closed leaf, through the reflection otherwise."""
    _same_shape(p, q)
    dy = [a - b for a, b in zip(p.y, q.y)]
    if p.leaf == q.leaf or p.is_spine or q.is_spine:
        dx = p.x0 - q.x0
    else:
        dx = p.x0 + q.x0
    # hypot rescales internally, so tiny coordinates do not underflow to 0
    return math.hypot(dx, *dy)


def reflect(x) -> np.ndarray:
    """Reflect across the hyperplane x0 = 0."""
    out = np.array(x, dtype=float)
    out[..., 0] = -out[..., 0]
    return out


def fold(k: int, p: BookPoint) -> np.ndarray:
    """k-th folding map into R^{d+1}: leaf k stays, every other leaf is reflected."""
    p.shape.check_leaf(k)
    sign = 1.0 if p.leaf in (k, SPINE) else -1.0
    return np.array((sign * p.x0,) + p.y, dtype=float)


def unfold(k: int, x, shape: BookShape) -> BookPoint:
    """Inverse of ``fold(k, .)`` on the closed half-space x0 >= 0."""
    x = np.asarray(x, dtype=float)
    if x.shape != (shape.d + 1,):
        raise ValueError(f"expected a vector of length {shape.d + 1}, got shape {x.shape}")
    shape.check_leaf(k)
    if x[0] < 0:
        raise ValueError(f"first coordinate {x[0]} < 0 is outside the image of leaf {k}")
    return BookPoint.on_leaf(shape, k, x[0], x[1:])


def convex_project(x) -> np.ndarray:
    """Nearest point of the closed half-space x0 >= 0."""
    out = np.array(x, dtype=float)
    out[..., 0] = np.maximum(out[..., 0], 0.0)
    return out


def project_spine(p: BookPoint) -> np.ndarray:
    return np.array(p.y, dtype=float)


def translate(z, p: BookPoint) -> BookPoint:
    """Act by the spine vector ``z``: shift spine coordinates, keep leaf and x0."""
    z = np.asarray(z, dtype=float)
    if z.shape != (p.shape.d,):
        raise ValueError(f"translation must have length {p.shape.d}")
    return BookPoint(p.shape, p.leaf, p.x0, tuple(np.add(p.y, z)))


def scale(lam: float, p: BookPoint) -> BookPoint:
    if lam < 0:
        raise ValueError(f"scale factor must be nonnegative, got {lam}")
    return BookPoint.on_leaf(p.shape, p.leaf or 1, lam * p.x0, tuple(lam * np.asarray(p.y, dtype=float)))
