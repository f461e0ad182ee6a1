"""Seeded sampling and the LLN / CLT experiment drivers.

Every replicate draws from its own substream, derived from the master seed
and the replicate index alone, so results do not depend on how replicates
are scheduled across workers.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .frechet import SampleSet, barycenter
from .geometry import SPINE
from .measures import (
    BookMeasure,
    Classification,
    Verdict,
    classify,
    costal_covariance,
    folded_mean,
    is_centered,
    nonsticky_covariance,
    spinal_covariance,
    spine_mean,
)
from .stats import SE_BAND, TestResult, binomial_fraction_test, compare_covariance, ks_two_sample


EIG_CLIP = 1e-12

# first-level spawn keys under the master seed
_REPLICATES, _REFERENCE, _SEMISPINAL = 0, 1, 2


@dataclass(frozen=True)
class SeedStream:
    """A node in a tree of independent random streams.

    ``SeedStream(seed).spawn(i)`` is reproducible from ``(seed, i)`` alone;
    the tree is realised with numpy's ``SeedSequence`` spawn keys.
    """

    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def spawn(self, index: int) -> SeedStream:
        return SeedStream(self.seed, self.path + (int(index),))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(self.seed), spawn_key=self.path)))


def _rng(stream) -> np.random.Generator:
    if isinstance(stream, np.random.Generator):
        return stream
    return stream.generator()


def sample_measure(measure: BookMeasure, stream, n: int) -> SampleSet:
    """``n`` i.i.d. points from ``measure``."""
    if n < 1:
        raise ValueError("n must be positive")
    labels, x0, y = measure.sample_arrays(_rng(stream), n)
    return SampleSet(measure.shape, labels, x0, y)


def gaussian_factor(cov) -> np.ndarray:
    """A matrix L with L L^T = cov, tolerating rank deficiency.

    Eigenvalues below 1e-12 (relative to the largest) are clipped to zero;
    clearly negative ones are rejected.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float)) if np.size(cov) else np.zeros((0, 0))
    n = cov.shape[0]
    if cov.shape != (n, n):
        raise ValueError("covariance must be square")
    if n == 0:
        return cov
    scale = max(1.0, float(np.abs(cov).max()))
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * scale):
        raise ValueError("covariance must be symmetric")
    lam, vec = np.linalg.eigh(0.5 * (cov + cov.T))
    if lam.min() < -1e-10 * scale:
        raise ValueError(f"covariance is indefinite (eigenvalue {lam.min():.3g})")
    lam = np.where(lam > EIG_CLIP * scale, lam, 0.0)
    return vec * np.sqrt(lam)


def sample_gaussian(cov, stream, n: int) -> np.ndarray:
    """``n`` mean-zero Gaussian vectors with covariance ``cov``, shape (n, dim)."""
    L = gaussian_factor(cov)
    z = _rng(stream).standard_normal((n, L.shape[0]))
    return z @ L.T


def sample_spinal_limit(measure: BookMeasure, stream, n: int) -> np.ndarray:
    return sample_gaussian(spinal_covariance(measure), stream, n)


def sample_costal_limit(measure: BookMeasure, k: int, stream, n: int) -> np.ndarray:
    return sample_gaussian(costal_covariance(measure, k), stream, n)


def sample_spinocostal_limit(measure: BookMeasure, k: int, stream, n: int) -> SampleSet:
    """Draws from the spinocostal limit: costal Gaussian, clamped to x0 >= 0, placed in leaf k."""
    c = classify(measure)
    if c.verdict is not Verdict.PARTLY_STICKY or c.leaf != k:
        warnings.warn(f"spinocostal limit for leaf {k} requested but the measure is {c}", stacklevel=2)
    g = sample_costal_limit(measure, k, stream, n)
    x0 = np.maximum(g[:, 0], 0.0)
    leaves = np.where(x0 > 0, k, SPINE)
    return SampleSet(measure.shape, leaves, x0, g[:, 1:])


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _check_centered(measure):
    scale = max(1.0, float(np.abs(spinal_covariance(measure)).max(initial=0.0)) ** 0.5)
    if not is_centered(measure, atol=1e-9 * scale):
        raise ValueError(f"measure is not centered (spine mean {spine_mean(measure)}); apply center() first")


# --------------------------------------------------------------------------
# law of large numbers


def _event(c: Classification, loc: np.ndarray) -> np.ndarray:
    if c.verdict is Verdict.STICKY:
        return loc == SPINE
    if c.verdict is Verdict.NONSTICKY:
        return loc == c.leaf
    return (loc == SPINE) | (loc == c.leaf)


@dataclass
class LLNReport:
    """Location of the empirical mean at each checkpoint, per replicate.

    ``locations`` uses 0 for the spine and k for the open leaf k;
    ``first_entry`` is the checkpoint N from which the predicted event held
    through the last checkpoint, or -1 if it did not hold at the end.
    """

    classification: Classification
    checkpoints: tuple[int, ...]
    locations: np.ndarray
    coords: np.ndarray
    event: np.ndarray
    first_entry: np.ndarray

    @property
    def replicates(self) -> int:
        return self.locations.shape[0]

    @property
    def fractions(self) -> np.ndarray:
        """Fraction of replicates where the predicted event holds, per checkpoint."""
        return self.event.mean(axis=0)

    @property
    def spine_fractions(self) -> np.ndarray:
        return (self.locations == SPINE).mean(axis=0)

    def target(self) -> str:
        c = self.classification
        return {Verdict.STICKY: "spine", Verdict.NONSTICKY: f"open leaf {c.leaf}",
                Verdict.PARTLY_STICKY: f"closed leaf {c.leaf}"}[c.verdict]


def run_lln(measure: BookMeasure, stream: SeedStream, checkpoints, M: int, workers: int = 1) -> LLNReport:
    checkpoints = tuple(int(n) for n in checkpoints)
    if not checkpoints or checkpoints[0] < 1 or any(b <= a for a, b in zip(checkpoints, checkpoints[1:])):
        raise ValueError("checkpoints must be positive and strictly increasing")
    if M < 1:
        raise ValueError("need at least one replicate")
    c = classify(measure)
    d = measure.shape.d
    reps = stream.spawn(_REPLICATES)

    def one(i):
        sample = sample_measure(measure, reps.spawn(i), checkpoints[-1])
        loc = np.empty(len(checkpoints), dtype=np.int64)
        xy = np.empty((len(checkpoints), d + 1))
        for j, n in enumerate(checkpoints):
            b = barycenter(sample.prefix(n))
            loc[j] = b.leaf
            xy[j] = b.coords
        return loc, xy

    results = _map(one, range(M), workers)
    locations = np.stack([r[0] for r in results])
    coords = np.stack([r[1] for r in results])
    event = _event(c, locations)
    # first index from which the event holds at every later checkpoint
    tail = np.flip(np.logical_and.accumulate(np.flip(event, axis=1), axis=1), axis=1)
    held = tail.any(axis=1)
    first_idx = np.argmax(tail, axis=1)
    first_entry = np.where(held, np.asarray(checkpoints)[first_idx], -1)
    return LLNReport(c, checkpoints, locations, coords, event, first_entry)


def lln_tests(report: LLNReport, threshold: float = 0.99, band: float = 2.0) -> list[TestResult]:
    """Finite-N checks of eventual absorption.

    Sticky measures: the on-spine fraction may not drop by more than ``band``
    standard errors between consecutive checkpoints and must end above where
    it started. Otherwise: the predicted-event fraction at the last
    checkpoint must reach ``threshold``.
    """
    f = report.fractions
    M = report.replicates
    if report.classification.verdict is Verdict.STICKY:
        se = np.sqrt((f[:-1] * (1 - f[:-1]) + f[1:] * (1 - f[1:])) / M)
        drops = f[:-1] - f[1:]
        z = np.where(se > 0, drops / np.where(se > 0, se, 1.0), np.where(drops > 0, np.inf, 0.0))
        worst = float(z.max()) if z.size else 0.0
        return [
            TestResult("spine_fraction_nondecreasing", worst, band, bool(worst <= band), (M,)),
            TestResult("spine_fraction_increases", float(f[-1] - f[0]), 0.0, bool(f[-1] > f[0]), (M,)),
        ]
    return [TestResult(f"final_fraction_in_{report.target().replace(' ', '_')}",
                       float(f[-1]), threshold, bool(f[-1] >= threshold), (M,))]


# --------------------------------------------------------------------------
# central limit theorem


@dataclass
class CLTReport:
    """Rescaled empirical means and matching limit-measure draws.

    ``coords`` holds, per replicate, (sqrt(N) x0, sqrt(N) y) of the rescaled
    mean in its own leaf for sticky and partly sticky measures, and
    sqrt(N) (F_k b_N - F_k b) for nonsticky ones. ``statistic`` and
    ``reference`` are the columns the tests compare.
    """

    classification: Classification
    N: int
    locations: np.ndarray
    coords: np.ndarray
    statistic: np.ndarray
    reference: np.ndarray
    columns: tuple[str, ...]
    tests: list[TestResult] = field(default_factory=list)

    @property
    def mode(self) -> str:
        return {Verdict.STICKY: "sticky", Verdict.PARTLY_STICKY: "partly-sticky",
                Verdict.NONSTICKY: "nonsticky"}[self.classification.verdict]

    @property
    def replicates(self) -> int:
        return self.locations.shape[0]

    @property
    def spine_fraction(self) -> float:
        return float(np.mean(self.locations == SPINE))

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.tests)


def rescaled_means(measure: BookMeasure, stream: SeedStream, N: int, M: int, workers: int = 1):
    """Locations and rescaled coordinates of sqrt(N) b_N for M replicates."""
    c = classify(measure)
    reps = stream.spawn(_REPLICATES)
    root_n = math.sqrt(N)
    eta = folded_mean(measure, c.leaf) if c.verdict is Verdict.NONSTICKY else None

    def one(i):
        b = barycenter(sample_measure(measure, reps.spawn(i), N))
        x = b.coords
        if eta is not None:
            if b.leaf not in (c.leaf, SPINE):
                x[0] = -x[0]
            x = root_n * (x - eta)
        else:
            x = root_n * x
        return b.leaf, x

    results = _map(one, range(M), workers)
    return np.array([r[0] for r in results], dtype=np.int64), np.stack([r[1] for r in results])


def run_clt(measure: BookMeasure, stream: SeedStream, N: int, M: int, alpha: float = 0.01,
            workers: int = 1, semispinal_n: int = 0) -> CLTReport:
    """Rescaled empirical means against the limit law predicted for the measure.

    The measure must already be centered. For partly sticky measures a
    positive ``semispinal_n`` also runs :func:`semispinal_check` with that
    many draws per estimator.
    """
    if N < 1 or M < 2:
        raise ValueError("need N >= 1 and M >= 2")
    _check_centered(measure)
    c = classify(measure)
    d = measure.shape.d
    loc, coords = rescaled_means(measure, stream, N, M, workers)
    ref_stream = stream.spawn(_REFERENCE)
    ycols = tuple(f"y{i}" for i in range(1, d + 1))
    tests: list[TestResult] = []

    if c.verdict is Verdict.STICKY:
        stat = coords[:, 1:]
        ref = sample_spinal_limit(measure, ref_stream, M)
        cols = ycols
        cov = spinal_covariance(measure)
    elif c.verdict is Verdict.PARTLY_STICKY:
        k = c.leaf
        sign = np.where((loc == k) | (loc == SPINE), 1.0, -1.0)
        stat = np.column_stack([sign * coords[:, 0], coords[:, 1:]])
        draws = sample_spinocostal_limit(measure, k, ref_stream, M)
        ref = draws.folded(k)
        cols = ("folded_x0",) + ycols
        cov = spinal_covariance(measure)
        tests.append(binomial_fraction_test(int(np.sum(loc == k)), M, 0.5, name=f"fraction_in_open_leaf_{k}"))
    else:
        stat = coords
        ref = sample_gaussian(nonsticky_covariance(measure), ref_stream, M)
        cols = ("folded_x0",) + ycols
        cov = nonsticky_covariance(measure)

    for j, name in enumerate(cols):
        tests.append(ks_two_sample(stat[:, j], ref[:, j], alpha, name=f"ks_{name}"))
    if c.verdict is Verdict.PARTLY_STICKY:
        if d:
            tests.append(compare_covariance(stat[:, 1:], cov, name="covariance_spine"))
        if semispinal_n:
            tests.extend(semispinal_check(measure, c.leaf, stream.spawn(_SEMISPINAL), semispinal_n))
    elif stat.shape[1]:
        tests.append(compare_covariance(stat, cov, name="covariance"))
    return CLTReport(c, N, loc, coords, stat, ref, cols, tests)


def semispinal_check(measure: BookMeasure, k: int, stream: SeedStream, n: int, edges=None,
                     band: float = SE_BAND) -> list[TestResult]:
    """Spine mass of the spinocostal limit, estimated two independent ways.

    For slabs B of the first spine coordinate, compare the fraction of
    spinocostal draws that land on the spine inside B with the difference
    g_S(B) - g_k((0, inf) x B) estimated from separate spinal and costal
    draws. Default slabs: 10 equal cells spanning +-2.5 spinal standard
    deviations. With d = 0 the single "slab" is the whole spine.
    """
    d = measure.shape.d
    push = sample_spinocostal_limit(measure, k, stream.spawn(0), n)
    spinal = sample_spinal_limit(measure, stream.spawn(1), n)
    costal = sample_costal_limit(measure, k, stream.spawn(2), n)
    on_spine = push.leaves == SPINE
    if d == 0:
        cells = [(-np.inf, np.inf)]
        coord = lambda a: np.zeros(len(a))
    else:
        if edges is None:
            sd = math.sqrt(spinal_covariance(measure)[0, 0])
            edges = sd * np.linspace(-2.5, 2.5, 11)
        cells = list(zip(edges[:-1], edges[1:]))
        coord = lambda a: a[:, 0]
    yp, ys, yc = coord(push.y), coord(spinal), coord(costal[:, 1:])
    out = []
    for i, (lo, hi) in enumerate(cells):
        p1 = np.mean(on_spine & (yp >= lo) & (yp < hi))
        ps = np.mean((ys >= lo) & (ys < hi))
        pk = np.mean((costal[:, 0] > 0) & (yc >= lo) & (yc < hi))
        se = math.sqrt((p1 * (1 - p1) + ps * (1 - ps) + pk * (1 - pk)) / n)
        dev = abs(p1 - (ps - pk))
        stat = dev / se if se > 0 else (0.0 if dev == 0 else math.inf)
        out.append(TestResult(f"semispinal_box_{i}", stat, band, bool(stat <= band), (n, n, n)))
    return out


# --------------------------------------------------------------------------
# output files


def _fmt(x: float) -> str:
    return repr(float(x))


def write_lln_csv(fh, report: LLNReport) -> None:
    d = report.coords.shape[2] - 1
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["replicate", "checkpoint", "location_class", "x0"] + [f"y{i}" for i in range(1, d + 1)])
    for r in range(report.replicates):
        for j, n in enumerate(report.checkpoints):
            w.writerow([r, n, int(report.locations[r, j])] + [_fmt(v) for v in report.coords[r, j]])


def write_clt_csv(fh, report: CLTReport) -> None:
    d = report.coords.shape[1] - 1
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["replicate", "N", "location_class", "c0"] + [f"c{i}" for i in range(1, d + 1)])
    for r in range(report.replicates):
        w.writerow([r, report.N, int(report.locations[r])] + [_fmt(v) for v in report.coords[r]])


def lln_summary(report: LLNReport, tests: list[TestResult]) -> dict:
    return {
        "mode": "lln",
        "classification": report.classification.to_dict(),
        "target": report.target(),
        "replicates": report.replicates,
        "checkpoints": list(report.checkpoints),
        "event_fractions": report.fractions.tolist(),
        "spine_fractions": report.spine_fractions.tolist(),
        "absorbed_fraction": float(np.mean(report.first_entry > 0)),
        "tests": [t.to_dict() for t in tests],
        "passed": all(t.passed for t in tests),
    }


def clt_summary(report: CLTReport) -> dict:
    c = report.classification
    out = {
        "mode": "clt",
        "limit": report.mode,
        "classification": c.to_dict(),
        "N": report.N,
        "replicates": report.replicates,
        "spine_fraction": report.spine_fraction,
        "columns": list(report.columns),
        "tests": [t.to_dict() for t in report.tests],
        "passed": report.passed,
    }
    if c.leaf is not None:
        out["leaf_fraction"] = float(np.mean(report.locations == c.leaf))
    return out
