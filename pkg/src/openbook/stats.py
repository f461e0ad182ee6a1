"""Two-sample and moment checks used to judge the limit theorems."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import kolmogorov

SE_BAND = 4.0


@dataclass(frozen=True)
class TestResult:
    name: str
    statistic: float
    threshold: float
    passed: bool
    n: tuple[int, ...]
    pvalue: float | None = None

    __test__ = False  # keep pytest from collecting this class

    def to_dict(self) -> dict:
        out = asdict(self)
        out["n"] = list(self.n)
        return out

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.name}: statistic={self.statistic:.6g} threshold={self.threshold:.6g}"


def ks_critical_value(alpha: float) -> float:
    """Asymptotic Kolmogorov constant c(alpha) = sqrt(-ln(alpha/2) / 2)."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return math.sqrt(-0.5 * math.log(alpha / 2.0))


def ks_statistic(a, b) -> float:
    """sup |F_a - F_b| over the pooled sample; ties handled by right-continuous ECDFs."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("KS test needs two nonempty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(a, b, alpha: float = 0.01, name: str = "ks") -> TestResult:
    """Two-sample Kolmogorov-Smirnov test against the asymptotic threshold.

    Rejects when D > c(alpha) * sqrt((n_a + n_b) / (n_a n_b)). With atoms in
    the underlying law the test only becomes more conservative.
    """
    D = ks_statistic(a, b)
    na, nb = np.size(a), np.size(b)
    scale = math.sqrt(na * nb / (na + nb))
    threshold = ks_critical_value(alpha) / scale
    return TestResult(name, D, threshold, bool(D <= threshold), (na, nb), float(kolmogorov(D * scale)))


def empirical_covariance(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValueError("need at least two samples")
    z = x - x.mean(axis=0)
    c = z.T @ z / (x.shape[0] - 1)
    return 0.5 * (c + c.T)


def covariance_standard_errors(samples) -> np.ndarray:
    """Large-sample standard error of each sample-covariance entry.

    Uses the fourth-moment plug-in Var(z_i z_j) / n with z the centered data.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    z = x - x.mean(axis=0)
    prod = z[:, :, None] * z[:, None, :]
    return np.sqrt(prod.var(axis=0, ddof=1) / n)


def compare_covariance(samples, analytic, band: float = SE_BAND, name: str = "covariance") -> TestResult:
    """Entrywise check |cov_hat - analytic| <= band * SE.

    The statistic is the largest standardized deviation over all entries;
    the test passes when it is at most ``band``.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    analytic = np.atleast_2d(np.asarray(analytic, dtype=float))
    if analytic.shape != (x.shape[1], x.shape[1]):
        raise ValueError(f"analytic matrix {analytic.shape} does not match data dimension {x.shape[1]}")
    if x.shape[1] == 0:
        return TestResult(name, 0.0, band, True, (x.shape[0],))
    emp = empirical_covariance(x)
    se = covariance_standard_errors(x)
    dev = np.abs(emp - analytic)
    slack = 1e-12 * max(1.0, float(np.abs(analytic).max()))
    z = np.where(se > 0, dev / np.where(se > 0, se, 1.0), np.where(dev <= slack, 0.0, np.inf))
    stat = float(z.max())
    return TestResult(name, stat, band, bool(stat <= band), (x.shape[0],))


def binomial_fraction_test(hits: int, n: int, p0: float, band: float = SE_BAND,
                           name: str = "fraction") -> TestResult:
    """Pass iff |hits/n - p0| <= band * sqrt(p0 (1 - p0) / n)."""
    if n <= 0 or not 0 <= hits <= n:
        raise ValueError("need 0 <= hits <= n and n > 0")
    dev = abs(hits / n - p0)
    threshold = band * math.sqrt(p0 * (1.0 - p0) / n)
    return TestResult(name, dev, threshold, bool(dev <= threshold), (n,))
