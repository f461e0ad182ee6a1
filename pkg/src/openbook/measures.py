"""Probability measures on the open book.

A measure is a mixture: weight ``w0`` on a spine component and weight
``w_k > 0`` on a component living in the open leaf k. Every component knows
its mean and second moment in closed form, so the moment trichotomy and the
limiting covariances are exact numbers rather than Monte Carlo estimates.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import BookPoint, BookShape, unfold

#: relative tolerance on |m_k| below which a measure counts as partly sticky
PARTLY_STICKY_RTOL = 1e-9

WEIGHT_ATOL = 1e-12


class ClassificationError(RuntimeError):
    """More than one nonnegative first moment: the component moments are broken."""


def _vec(a, n=None, name="vector"):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.ndim != 1 or (n is not None and a.shape[0] != n):
        raise ValueError(f"{name} must have length {n}, got shape {a.shape}")
    return a


def _psd(a, n, name="covariance"):
    a = np.asarray(a, dtype=float).reshape(n, n) if n else np.zeros((0, 0))
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max(initial=0))):
        raise ValueError(f"{name} must be symmetric")
    if n and np.linalg.eigvalsh(a).min() < -1e-10 * max(1.0, np.abs(a).max()):
        raise ValueError(f"{name} must be positive semidefinite")
    return a


def _box_moments(low, high):
    mean = 0.5 * (low + high)
    second = np.outer(mean, mean)
    np.fill_diagonal(second, (low * low + low * high + high * high) / 3.0)
    return mean, second


# --------------------------------------------------------------------------
# components. `dim` is the length of the vectors a component produces: d+1 for
# leaf components (x0 first), d for spine components.


@dataclass(frozen=True, eq=False)
class PointMassSet:
    """Finitely many atoms with probabilities."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None] if atoms.size else atoms.reshape(1, 0)
        weights = _vec(self.weights, atoms.shape[0], "atom weights")
        if np.any(weights < 0) or not math.isclose(weights.sum(), 1.0, abs_tol=1e-12):
            raise ValueError("atom weights must be nonnegative and sum to 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    @property
    def second_moment(self) -> np.ndarray:
        return (self.atoms * self.weights[:, None]).T @ self.atoms

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.atoms[idx]

    def translate(self, z) -> PointMassSet:
        return PointMassSet(self.atoms + _shift(z, self.dim), self.weights)

    def scale(self, lam: float) -> PointMassSet:
        return PointMassSet(lam * self.atoms, self.weights)


def _shift(z, dim):
    # leaf components carry x0 in front; spine translations never move it
    z = np.asarray(z, dtype=float)
    return np.concatenate([np.zeros(dim - z.shape[0]), z])


@dataclass(frozen=True, eq=False)
class HalfNormalProduct:
    """Leaf component: independent distance-to-spine and Gaussian spine part.

    The distance is |N(0, scale^2)| when ``radial == "half_normal"`` and
    Exponential(rate) when ``radial == "exponential"``.
    """

    radial: str
    param: float
    mean_y: np.ndarray
    cov_y: np.ndarray

    def __post_init__(self):
        if self.radial not in ("half_normal", "exponential"):
            raise ValueError(f"unknown radial law {self.radial!r}")
        if not self.param > 0:
            raise ValueError("radial scale/rate must be positive")
        mean_y = _vec(self.mean_y, name="mean") if np.size(self.mean_y) else np.zeros(0)
        object.__setattr__(self, "mean_y", mean_y)
        object.__setattr__(self, "cov_y", _psd(self.cov_y, mean_y.shape[0]))

    @property
    def dim(self) -> int:
        return self.mean_y.shape[0] + 1

    def _radial_moments(self):
        if self.radial == "half_normal":
            s = self.param
            return s * math.sqrt(2.0 / math.pi), s * s
        r = self.param
        return 1.0 / r, 2.0 / (r * r)

    @property
    def mean(self) -> np.ndarray:
        return np.concatenate([[self._radial_moments()[0]], self.mean_y])

    @property
    def second_moment(self) -> np.ndarray:
        e1, e2 = self._radial_moments()
        out = np.empty((self.dim, self.dim))
        out[0, 0] = e2
        out[0, 1:] = out[1:, 0] = e1 * self.mean_y
        out[1:, 1:] = self.cov_y + np.outer(self.mean_y, self.mean_y)
        return out

    def _radial(self, rng, n):
        if self.radial == "half_normal":
            draw = lambda m: np.abs(rng.normal(0.0, self.param, m))
        else:
            draw = lambda m: rng.exponential(1.0 / self.param, m)
        r = draw(n)
        bad = r <= 0
        while bad.any():
            r[bad] = draw(int(bad.sum()))
            bad = r <= 0
        return r

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = np.empty((n, self.dim))
        out[:, 0] = self._radial(rng, n)
        if self.dim > 1:
            out[:, 1:] = rng.multivariate_normal(self.mean_y, self.cov_y, size=n, method="eigh")
        return out

    def translate(self, z) -> HalfNormalProduct:
        return HalfNormalProduct(self.radial, self.param, self.mean_y + np.asarray(z, float), self.cov_y)

    def scale(self, lam: float) -> HalfNormalProduct:
        param = lam * self.param if self.radial == "half_normal" else self.param / lam
        return HalfNormalProduct(self.radial, param, lam * self.mean_y, lam * lam * self.cov_y)


@dataclass(frozen=True, eq=False)
class Gaussian:
    """Spine component N(mean, cov)."""

    mean_y: np.ndarray
    cov_y: np.ndarray

    def __post_init__(self):
        mean_y = _vec(self.mean_y, name="mean") if np.size(self.mean_y) else np.zeros(0)
        object.__setattr__(self, "mean_y", mean_y)
        object.__setattr__(self, "cov_y", _psd(self.cov_y, mean_y.shape[0]))

    @property
    def dim(self) -> int:
        return self.mean_y.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.mean_y.copy()

    @property
    def second_moment(self) -> np.ndarray:
        return self.cov_y + np.outer(self.mean_y, self.mean_y)

    def sample(self, rng, n):
        if self.dim == 0:
            return np.zeros((n, 0))
        return rng.multivariate_normal(self.mean_y, self.cov_y, size=n, method="eigh")

    def translate(self, z) -> Gaussian:
        return Gaussian(self.mean_y + np.asarray(z, float), self.cov_y)

    def scale(self, lam: float) -> Gaussian:
        return Gaussian(lam * self.mean_y, lam * lam * self.cov_y)


@dataclass(frozen=True, eq=False)
class UniformBox:
    """Uniform law on an axis-aligned box ``[low, high]``."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.low, dtype=float)).ravel()
        high = np.atleast_1d(np.asarray(self.high, dtype=float)).ravel()
        if low.shape != high.shape or np.any(high < low):
            raise ValueError("box needs matching low <= high")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def dim(self) -> int:
        return self.low.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return _box_moments(self.low, self.high)[0]

    @property
    def second_moment(self) -> np.ndarray:
        return _box_moments(self.low, self.high)[1]

    def sample(self, rng, n):
        return rng.uniform(self.low, self.high, size=(n, self.dim))

    def translate(self, z) -> UniformBox:
        s = _shift(z, self.dim)
        return UniformBox(self.low + s, self.high + s)

    def scale(self, lam: float) -> UniformBox:
        return UniformBox(lam * self.low, lam * self.high)


LEAF_FAMILIES = (PointMassSet, HalfNormalProduct, UniformBox)
SPINE_FAMILIES = (PointMassSet, Gaussian, UniformBox)


def _check_leaf_component(c, d):
    if not isinstance(c, LEAF_FAMILIES):
        raise TypeError(f"unsupported leaf component {type(c).__name__}")
    if c.dim != d + 1:
        raise ValueError(f"leaf component has dimension {c.dim}, expected {d + 1}")
    if isinstance(c, PointMassSet) and np.any(c.atoms[c.weights > 0, 0] <= 0):
        raise ValueError("leaf atoms must lie strictly off the spine (x0 > 0)")
    if isinstance(c, UniformBox) and not c.low[0] > 0:
        raise ValueError("leaf boxes must lie strictly inside the open half-space")


# --------------------------------------------------------------------------


class Verdict(enum.Enum):
    STICKY = "Sticky"
    PARTLY_STICKY = "PartlySticky"
    NONSTICKY = "Nonsticky"


@dataclass(frozen=True)
class Classification:
    verdict: Verdict
    leaf: int | None
    moments: np.ndarray = field(repr=False)
    leaf_means: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def __str__(self):
        if self.verdict is Verdict.STICKY:
            return "Sticky"
        return f"{self.verdict.value}({self.leaf})"

    def to_dict(self) -> dict:
        return {
            "verdict": str(self),
            "kind": self.verdict.value,
            "leaf": self.leaf,
            "m": self.moments.tolist(),
            "v": self.leaf_means.tolist(),
            "w": self.weights.tolist(),
        }


@dataclass(frozen=True, eq=False)
class BookMeasure:
    """Nondegenerate mixture ``w0 * spine + sum_k w_k * leaves[k-1]``."""

    shape: BookShape
    w0: float
    spine: object
    weights: tuple[float, ...]
    leaves: tuple

    def __post_init__(self):
        d, K = self.shape.d, self.shape.K
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "leaves", tuple(self.leaves))
        if len(self.weights) != K or len(self.leaves) != K:
            raise ValueError(f"need exactly K={K} leaf weights and components")
        if not 0.0 <= self.w0 < 1.0:
            raise ValueError(f"spine weight must lie in [0, 1), got {self.w0}")
        if any(not 0.0 < w < 1.0 for w in self.weights):
            raise ValueError("every leaf weight must lie in (0, 1); drop empty leaves instead")
        total = self.w0 + math.fsum(self.weights)
        if abs(total - 1.0) > WEIGHT_ATOL:
            raise ValueError(f"weights sum to {total!r}, not 1")
        if not isinstance(self.spine, SPINE_FAMILIES) or self.spine.dim != d:
            raise ValueError(f"spine component must be a {d}-dimensional spine family")
        for c in self.leaves:
            _check_leaf_component(c, d)

    @classmethod
    def from_components(cls, shape, leaves, weights, spine=None, w0=0.0):
        if spine is None:
            spine = PointMassSet(np.zeros((1, shape.d)), [1.0])
        return cls(shape, w0, spine, tuple(weights), tuple(leaves))

    @property
    def w(self) -> np.ndarray:
        """All weights (w0, w1, ..., wK)."""
        return np.array((self.w0,) + self.weights)

    def components(self):
        return (self.spine,) + self.leaves

    def translate(self, z) -> BookMeasure:
        return BookMeasure(self.shape, self.w0, self.spine.translate(z), self.weights,
                           tuple(c.translate(z) for c in self.leaves))

    def scale(self, lam: float) -> BookMeasure:
        if not lam > 0:
            raise ValueError("measures can only be scaled by lam > 0")
        return BookMeasure(self.shape, self.w0, self.spine.scale(lam), self.weights,
                           tuple(c.scale(lam) for c in self.leaves))

    def sample_arrays(self, rng: np.random.Generator, n: int):
        """Draw ``n`` i.i.d. points as (leaf labels, x0, y) arrays."""
        labels = rng.choice(self.shape.K + 1, size=n, p=self.w)
        x0 = np.zeros(n)
        y = np.zeros((n, self.shape.d))
        for c, comp in enumerate(self.components()):
            idx = np.flatnonzero(labels == c)
            if idx.size == 0:
                continue
            draw = comp.sample(rng, idx.size)
            if c == 0:
                y[idx] = draw
            else:
                x0[idx] = draw[:, 0]
                y[idx] = draw[:, 1:]
        return labels, x0, y


# --------------------------------------------------------------------------
# moments


def leaf_means_v(measure: BookMeasure) -> np.ndarray:
    """Mean distance to the spine under each leaf component: (v_1, ..., v_K)."""
    return np.array([c.mean[0] for c in measure.leaves])


def leaf_mean_v(measure: BookMeasure, k: int) -> float:
    measure.shape.check_leaf(k)
    return float(measure.leaves[k - 1].mean[0])


def moment_vector(weights, leaf_means) -> np.ndarray:
    """m_k = w_k v_k - sum_{j != k} w_j v_j, batched over leading axes."""
    wv = np.asarray(weights, dtype=float) * np.asarray(leaf_means, dtype=float)
    # leave-one-out sums rather than total - wv: balanced rational inputs stay exactly 0
    others = np.stack([np.delete(wv, k, axis=-1).sum(axis=-1) for k in range(wv.shape[-1])], axis=-1)
    return wv - others


def first_moments(measure: BookMeasure) -> np.ndarray:
    return moment_vector(measure.weights, leaf_means_v(measure))


def first_moment(measure: BookMeasure, k: int) -> float:
    measure.shape.check_leaf(k)
    return float(first_moments(measure)[k - 1])


def classify(measure: BookMeasure, rtol: float = PARTLY_STICKY_RTOL) -> Classification:
    """Sort the measure into sticky / partly sticky / nonsticky.

    ``|m_k| <= rtol * sum_j w_j v_j`` is treated as m_k = 0.
    """
    v = leaf_means_v(measure)
    w = np.asarray(measure.weights)
    m = moment_vector(w, v)
    tol = rtol * float(w @ v)
    nonneg = np.flatnonzero(m >= -tol)
    if nonneg.size > 1:
        raise ClassificationError(
            f"leaves {list(nonneg + 1)} all have nonnegative first moment {m[nonneg]}")
    if nonneg.size == 0:
        verdict, leaf = Verdict.STICKY, None
    else:
        leaf = int(nonneg[0]) + 1
        verdict = Verdict.PARTLY_STICKY if abs(m[leaf - 1]) <= tol else Verdict.NONSTICKY
    return Classification(verdict, leaf, m, v, measure.w)


def spine_mean(measure: BookMeasure) -> np.ndarray:
    """Mean of the spine projection P_S p under the measure."""
    out = measure.w0 * measure.spine.mean
    for w, c in zip(measure.weights, measure.leaves):
        out = out + w * c.mean[1:]
    return out


def folded_mean(measure: BookMeasure, k: int) -> np.ndarray:
    """Mean of the k-folded pushforward; its first entry is m_k."""
    measure.shape.check_leaf(k)
    return np.concatenate([[first_moment(measure, k)], spine_mean(measure)])


def spinal_covariance(measure: BookMeasure) -> np.ndarray:
    """Second moment of spine projections (a covariance once the measure is centered)."""
    out = measure.w0 * measure.spine.second_moment
    for w, c in zip(measure.weights, measure.leaves):
        out = out + w * c.second_moment[1:, 1:]
    return out


def costal_covariance(measure: BookMeasure, k: int) -> np.ndarray:
    """Second moment of the k-folded pushforward."""
    measure.shape.check_leaf(k)
    d = measure.shape.d
    out = np.zeros((d + 1, d + 1))
    out[1:, 1:] = measure.w0 * measure.spine.second_moment
    for j, (w, c) in enumerate(zip(measure.weights, measure.leaves), start=1):
        s = c.second_moment.copy()
        if j != k:
            s[0, 1:] *= -1.0
            s[1:, 0] *= -1.0
        out += w * s
    return out


def nonsticky_covariance(measure: BookMeasure, k: int | None = None) -> np.ndarray:
    """Covariance of the k-folded pushforward about the folded population mean."""
    c = classify(measure)
    if c.verdict is not Verdict.NONSTICKY or (k is not None and k != c.leaf):
        raise ValueError(f"measure is {c}, not Nonsticky({k if k is not None else 'k'})")
    eta = folded_mean(measure, c.leaf)
    return costal_covariance(measure, c.leaf) - np.outer(eta, eta)


def population_mean(measure: BookMeasure) -> BookPoint:
    c = classify(measure)
    if c.verdict is Verdict.NONSTICKY:
        return unfold(c.leaf, folded_mean(measure, c.leaf), measure.shape)
    return BookPoint.spine(measure.shape, spine_mean(measure))


def center(measure: BookMeasure) -> BookMeasure:
    """Translate along the spine so that the population mean projects to 0."""
    shift = spine_mean(measure)
    if measure.shape.d == 0 or not np.any(shift):
        return measure
    return measure.translate(-shift)


def is_centered(measure: BookMeasure, atol: float = 1e-12) -> bool:
    return bool(np.all(np.abs(spine_mean(measure)) <= atol))


# --------------------------------------------------------------------------
# JSON measure files


def _spine_from_spec(spec, d):
    if spec is None:
        return PointMassSet(np.zeros((1, d)), [1.0])
    fam, p = spec["family"], spec.get("params", {})
    if fam == "point_mass":
        if d == 0:
            atoms = np.zeros((len(p.get("weights", [1.0])), 0))
        else:
            atoms = np.asarray(p["atoms"], dtype=float).reshape(-1, d)
        return PointMassSet(atoms, p.get("weights", np.full(len(atoms), 1.0 / len(atoms))))
    if fam == "gaussian":
        return Gaussian(p.get("mean", np.zeros(d)), p.get("cov", np.eye(d)))
    if fam == "uniform_box":
        return UniformBox(p["low"], p["high"])
    raise ValueError(f"unknown spine family {fam!r}")


def _leaf_from_spec(spec, d):
    fam, p = spec["family"], spec.get("params", {})
    if fam == "point_mass":
        atoms = np.asarray(p["atoms"], dtype=float).reshape(-1, d + 1)
        return PointMassSet(atoms, p.get("weights", np.full(len(atoms), 1.0 / len(atoms))))
    if fam == "half_normal_product":
        radial = p.get("radial", "half_normal")
        param = p["scale"] if radial == "half_normal" else p["rate"]
        return HalfNormalProduct(radial, param, p.get("mean", np.zeros(d)), p.get("cov", np.eye(d)))
    if fam == "uniform_box":
        return UniformBox(p["low"], p["high"])
    raise ValueError(f"unknown leaf family {fam!r}")


def measure_from_spec(spec: dict) -> BookMeasure:
    """Build a measure from the JSON schema documented in the README."""
    try:
        shape = BookShape(int(spec["d"]), int(spec["K"]))
        leaves = spec["leaves"]
        if len(leaves) != shape.K:
            raise ValueError(f"K={shape.K} but {len(leaves)} leaves given")
        w0 = float(spec.get("w0", 0.0))
        weights = [float(leaf["w"]) for leaf in leaves]
        total = w0 + math.fsum(weights)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {total!r}, not 1 (tolerance 1e-9)")
        if total != 1.0:
            w0, weights = w0 / total, [w / total for w in weights]
        return BookMeasure(
            shape,
            w0,
            _spine_from_spec(spec.get("spine"), shape.d),
            tuple(weights),
            tuple(_leaf_from_spec(leaf, shape.d) for leaf in leaves),
        )
    except KeyError as e:
        raise ValueError(f"measure JSON is missing field {e}") from None


def load_measure(path: str | Path) -> BookMeasure:
    with open(path) as fh:
        return measure_from_spec(json.load(fh))


def _component_spec(c, leaf: bool) -> dict:
    if isinstance(c, PointMassSet):
        return {"family": "point_mass", "params": {"atoms": c.atoms.tolist(), "weights": c.weights.tolist()}}
    if isinstance(c, UniformBox):
        return {"family": "uniform_box", "params": {"low": c.low.tolist(), "high": c.high.tolist()}}
    if isinstance(c, Gaussian):
        return {"family": "gaussian", "params": {"mean": c.mean_y.tolist(), "cov": c.cov_y.tolist()}}
    key = "scale" if c.radial == "half_normal" else "rate"
    return {"family": "half_normal_product",
            "params": {"radial": c.radial, key: c.param, "mean": c.mean_y.tolist(), "cov": c.cov_y.tolist()}}


def measure_to_spec(measure: BookMeasure) -> dict:
    return {
        "d": measure.shape.d,
        "K": measure.shape.K,
        "w0": measure.w0,
        "spine": _component_spec(measure.spine, leaf=False),
        "leaves": [dict(w=w, **_component_spec(c, leaf=True)) for w, c in zip(measure.weights, measure.leaves)],
    }
