"""Frechet means (barycenters) of finite samples on the open book.

The barycenter has a closed form: fold the sample along each leaf k, average
in R^{d+1}, and keep the (at most one) folded average with nonnegative first
coordinate. If none qualifies the mean is the spine point over the Euclidean
mean of the spine projections.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import SPINE, BookPoint, BookShape, convex_project, unfold
from .measures import BookMeasure, PointMassSet, first_moment

TIE_TOL = 1e-10


class OracleMismatch(AssertionError):
    """The brute-force search found a point that beats the candidate enumeration."""


@dataclass(frozen=True, eq=False)
class SampleSet:
    """N >= 1 points on one open book, stored column-wise.

    ``leaves[n] == 0`` marks a spine point (with ``x0[n] == 0``).
    """

    shape: BookShape
    leaves: np.ndarray
    x0: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        leaves = np.asarray(self.leaves, dtype=np.int64).ravel()
        x0 = np.asarray(self.x0, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).reshape(len(leaves), self.shape.d)
        if len(leaves) == 0:
            raise ValueError("a sample needs at least one point")
        if x0.shape != leaves.shape:
            raise ValueError("leaves and x0 must have the same length")
        if np.any(leaves < 0) or np.any(leaves > self.shape.K):
            raise ValueError(f"leaf labels must lie in 0..{self.shape.K}")
        on_spine = leaves == SPINE
        if np.any(x0[on_spine] != 0.0) or np.any(~(x0[~on_spine] > 0.0)):
            raise ValueError("non-canonical point: spine rows need x0 == 0, leaf rows x0 > 0")
        x0 = np.where(on_spine, 0.0, x0)  # drop -0.0
        object.__setattr__(self, "leaves", leaves)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_points(cls, points: Sequence[BookPoint]) -> SampleSet:
        points = list(points)
        if not points:
            raise ValueError("a sample needs at least one point")
        shape = points[0].shape
        if any(p.shape != shape for p in points):
            raise ValueError("all points must share one BookShape")
        return cls(
            shape,
            np.array([p.leaf for p in points]),
            np.array([p.x0 for p in points]),
            np.array([p.y for p in points], dtype=float).reshape(len(points), shape.d),
        )

    def __len__(self):
        return len(self.leaves)

    def prefix(self, n: int) -> SampleSet:
        return SampleSet(self.shape, self.leaves[:n], self.x0[:n], self.y[:n])

    @property
    def points(self) -> list[BookPoint]:
        return [BookPoint(self.shape, int(k), x, tuple(y)) for k, x, y in zip(self.leaves, self.x0, self.y)]

    def folded(self, k: int) -> np.ndarray:
        """All points under the k-th folding map, as an (N, d+1) array."""
        self.shape.check_leaf(k)
        sign = np.where((self.leaves == k) | (self.leaves == SPINE), 1.0, -1.0)
        return np.column_stack([sign * self.x0, self.y])

    def translate(self, z) -> SampleSet:
        return SampleSet(self.shape, self.leaves, self.x0, self.y + np.asarray(z, dtype=float))

    def scale(self, lam: float) -> SampleSet:
        if lam < 0:
            raise ValueError("scale factor must be nonnegative")
        x0 = lam * self.x0
        return SampleSet(self.shape, np.where(x0 > 0, self.leaves, SPINE), x0, lam * self.y)


def folded_average(sample: SampleSet, k: int) -> np.ndarray:
    return sample.folded(k).mean(axis=0)


def folded_averages(sample: SampleSet) -> np.ndarray:
    """First coordinates of all K folded averages, in one pass."""
    N = len(sample)
    per_leaf = np.bincount(sample.leaves, weights=sample.x0, minlength=sample.shape.K + 1)[1:]
    total = per_leaf.sum()
    return (2.0 * per_leaf - total) / N


def projected_mean(sample: SampleSet) -> np.ndarray:
    return sample.y.mean(axis=0)


def frechet_objective(p: BookPoint, sample: SampleSet) -> float:
    """Sum of squared distances from ``p`` to the sample points."""
    if p.shape != sample.shape:
        raise ValueError("shape mismatch")
    dy = sample.y - np.asarray(p.y, dtype=float)
    same = (sample.leaves == p.leaf) | (sample.leaves == SPINE) | p.is_spine
    dx = np.where(same, sample.x0 - p.x0, sample.x0 + p.x0)
    return float(dx @ dx + np.einsum("ij,ij->", dy, dy))


def barycenter(sample: SampleSet) -> BookPoint:
    """Exact Frechet mean of the sample.

    Runs in O(N K + N d). A folded average landing exactly on the boundary
    hyperplane yields the canonical spine point.
    """
    ybar = projected_mean(sample)
    first = folded_averages(sample)
    nonneg = np.flatnonzero(first >= 0)
    if nonneg.size > 1:
        # impossible for K >= 3 unless every point sits on the spine
        assert np.all(first[nonneg] == 0), first
    if nonneg.size == 1:
        k = int(nonneg[0]) + 1
        return BookPoint.on_leaf(sample.shape, k, float(first[k - 1]), ybar)
    return BookPoint.spine(sample.shape, ybar)


def _golden_section(f, lo, hi, tol=1e-12, maxiter=400):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, e = b - invphi * (b - a), a + invphi * (b - a)
    fc, fe = f(c), f(e)
    for _ in range(maxiter):
        if b - a <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc <= fe:
            b, e, fe = e, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, e, fe
            e = a + invphi * (b - a)
            fe = f(e)
    t = 0.5 * (a + b)
    return t, f(t)


def barycenter_oracle(sample: SampleSet, line_search: bool | None = None) -> BookPoint:
    """Brute-force Frechet mean used to check :func:`barycenter`.

    For each closed leaf the objective restricted to that leaf is a Euclidean
    least-squares problem over a half-space, whose minimizer is the clamped
    folded average. Every such candidate plus the spine point over the
    projected mean is scored with :func:`frechet_objective` and the smallest
    wins, ties (within 1e-10) going to the spine.

    With ``line_search`` (default: on when d <= 1 and N <= 50) a golden-section
    search along every leaf ray above the projected mean cross-checks the
    winner and raises :class:`OracleMismatch` if it can be beaten.
    """
    shape = sample.shape
    ybar = projected_mean(sample)
    best = BookPoint.spine(shape, ybar)
    best_val = frechet_objective(best, sample)
    for k in range(1, shape.K + 1):
        eta = convex_project(sample.folded(k).mean(axis=0))
        cand = unfold(k, eta, shape)
        val = frechet_objective(cand, sample)
        if val < best_val - TIE_TOL * max(1.0, best_val):
            best, best_val = cand, val

    if line_search is None:
        line_search = shape.d <= 1 and len(sample) <= 50
    if line_search:
        reach = float(np.max(sample.x0)) + 1.0
        for k in range(1, shape.K + 1):
            f = lambda t: frechet_objective(BookPoint.on_leaf(shape, k, t, ybar), sample)
            _, val = _golden_section(f, 0.0, reach)
            if val < best_val - 1e-9 * max(1.0, best_val):
                raise OracleMismatch(f"line search on leaf {k} reached {val} < {best_val}")
    return best


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GradientCheck:
    analytic: float
    estimate: float
    stderr: float
    exact: bool


def _gamma_atoms(measure: BookMeasure, k: int):
    """Atoms and probabilities of the k-folded pushforward of a finitely supported measure."""
    d = measure.shape.d
    atoms, probs = [np.zeros((0, d + 1))], [np.zeros(0)]
    if measure.w0 > 0:
        sp = measure.spine
        atoms.append(np.column_stack([np.zeros(len(sp.weights)), sp.atoms]))
        probs.append(measure.w0 * sp.weights)
    for j, (w, c) in enumerate(zip(measure.weights, measure.leaves), start=1):
        a = c.atoms.copy()
        if j != k:
            a[:, 0] *= -1.0
        atoms.append(a)
        probs.append(w * c.weights)
    return np.concatenate(atoms), np.concatenate(probs)


def gamma_gradient_check(measure: BookMeasure, k: int, h: float = 1e-3, M: int = 10**6,
                         rng: np.random.Generator | None = None) -> GradientCheck:
    """Compare m_k with a central difference of -Gamma_k along x0 at the hyperplane.

    Gamma_k(x) = 1/2 E|x - Y|^2 with Y drawn from the k-folded measure. For
    finitely supported measures Gamma_k is summed exactly over the atoms;
    otherwise it is a Monte Carlo average over ``M`` folded draws, with the
    same draws used on both sides of the difference.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    measure.shape.check_leaf(k)
    d = measure.shape.d
    e0 = np.zeros(d + 1)
    e0[0] = h

    finite = all(isinstance(c, PointMassSet) for c in measure.components())
    if finite:
        ys, probs = _gamma_atoms(measure, k)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        labels, x0, y = measure.sample_arrays(rng, M)
        sign = np.where((labels == k) | (labels == SPINE), 1.0, -1.0)
        ys = np.column_stack([sign * x0, y])
        probs = np.full(M, 1.0 / M)

    def gamma(x):
        r = x - ys
        return 0.5 * probs @ np.einsum("ij,ij->i", r, r)

    estimate = -(gamma(e0) - gamma(-e0)) / (2.0 * h)
    stderr = 0.0 if finite else float(np.std(ys[:, 0], ddof=1) / math.sqrt(M))
    return GradientCheck(first_moment(measure, k), float(estimate), stderr, finite)


# --------------------------------------------------------------------------
# CSV point files: header leaf,x0,y1,...,yd


class PointFileError(ValueError):
    def __init__(self, row: int, msg: str):
        super().__init__(f"row {row}: {msg}")
        self.row = row


def read_points(lines: Iterable[str], K: int | None = None) -> SampleSet:
    """Parse a point CSV. ``K`` defaults to max(3, largest leaf label)."""
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise PointFileError(1, "empty file") from None
    d = len(header) - 2
    expected = ["leaf", "x0"] + [f"y{i}" for i in range(1, d + 1)]
    if d < 0 or header != expected:
        raise PointFileError(1, f"header must be {','.join(expected) if d >= 0 else 'leaf,x0,y1,...'}")
    leaves, x0s, ys = [], [], []
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != d + 2:
            raise PointFileError(row_no, f"expected {d + 2} fields, got {len(row)}")
        try:
            leaf = int(row[0])
            vals = [float(c) for c in row[1:]]
        except ValueError as e:
            raise PointFileError(row_no, str(e)) from None
        if not all(math.isfinite(v) for v in vals):
            raise PointFileError(row_no, "non-finite coordinate")
        if leaf < 0 or (K is not None and leaf > K):
            raise PointFileError(row_no, f"leaf {leaf} out of range")
        if leaf == 0 and vals[0] != 0.0:
            raise PointFileError(row_no, "spine rows (leaf=0) need x0=0")
        if leaf > 0 and not vals[0] > 0.0:
            raise PointFileError(row_no, "leaf rows need x0>0")
        leaves.append(leaf)
        x0s.append(vals[0])
        ys.append(vals[1:])
    if not leaves:
        raise PointFileError(2, "no points")
    shape = BookShape(d, K if K is not None else max(3, max(leaves)))
    return SampleSet(shape, np.array(leaves), np.array(x0s), np.array(ys, dtype=float).reshape(len(leaves), d))


def write_points(fh, sample: SampleSet) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["leaf", "x0"] + [f"y{i}" for i in range(1, sample.shape.d + 1)])
    for k, x, y in zip(sample.leaves, sample.x0, sample.y):
        w.writerow([int(k), repr(float(x))] + [repr(float(v)) for v in y])
