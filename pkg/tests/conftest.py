import numpy as np
import pytest

from openbook.geometry import BookShape
from openbook.measures import (
    BookMeasure,
    Gaussian,
    HalfNormalProduct,
    PointMassSet,
    UniformBox,
)


def spider_measure(r=1.0, weights=(1 / 3, 1 / 3, 1 / 3)):
    shape = BookShape(0, len(weights))
    leaves = [PointMassSet([[r]], [1.0]) for _ in weights]
    return BookMeasure.from_components(shape, leaves, weights)


def exp_leaves_measure(weights, d=1, spine_mean=0.0):
    shape = BookShape(d, len(weights))
    leaves = [HalfNormalProduct("exponential", 1.0, np.full(d, spine_mean), np.eye(d)) for _ in weights]
    return BookMeasure.from_components(shape, leaves, weights)


def generic_measure():
    """d=2, K=4, every component family, nonzero spine weight."""
    shape = BookShape(2, 4)
    spine = Gaussian([0.3, -0.2], [[1.0, 0.3], [0.3, 0.5]])
    leaves = [
        HalfNormalProduct("half_normal", 1.5, [0.2, 0.1], [[0.8, -0.1], [-0.1, 0.6]]),
        HalfNormalProduct("exponential", 2.0, [-1.0, 0.4], [[0.5, 0.0], [0.0, 0.5]]),
        UniformBox([0.5, -1.0, 0.0], [2.0, 1.0, 3.0]),
        PointMassSet([[1.0, 0.0, 1.0], [0.25, 2.0, -1.0], [3.0, -0.5, 0.5]], [0.5, 0.3, 0.2]),
    ]
    return BookMeasure(shape, 0.1, spine, (0.3, 0.2, 0.25, 0.15), tuple(leaves))


def random_measure(rng, K=None, d=None, w0=None):
    K = K if K is not None else int(rng.integers(3, 6))
    d = d if d is not None else int(rng.integers(0, 4))
    shape = BookShape(d, K)
    w = rng.dirichlet(np.ones(K + 1))
    if w0 is not None:
        w = np.concatenate([[w0], (1 - w0) * w[1:] / w[1:].sum()])
    w = np.clip(w, 1e-3, None)
    w /= w.sum()
    leaves = []
    for _ in range(K):
        kind = rng.integers(3)
        if kind == 0:
            n = int(rng.integers(1, 4))
            atoms = np.column_stack([rng.uniform(0.1, 3.0, n), rng.normal(size=(n, d))])
            leaves.append(PointMassSet(atoms, rng.dirichlet(np.ones(n))))
        elif kind == 1:
            A = rng.normal(size=(d, d))
            radial = "half_normal" if rng.random() < 0.5 else "exponential"
            leaves.append(HalfNormalProduct(radial, rng.uniform(0.2, 3.0), rng.normal(size=d), A @ A.T))
        else:
            lo = np.concatenate([[rng.uniform(0.05, 1.0)], rng.normal(size=d)])
            leaves.append(UniformBox(lo, lo + rng.uniform(0.1, 2.0, d + 1)))
    A = rng.normal(size=(d, d))
    spine = Gaussian(rng.normal(size=d), A @ A.T)
    return BookMeasure(shape, float(1.0 - w[1:].sum()), spine, tuple(w[1:]), tuple(leaves))


@pytest.fixture
def rng():
    return np.random.default_rng(20121220)


def random_sample(rng, N=None, K=None, d=None, integer=False):
    """Random point set; ``integer`` coordinates make boundary ties likely."""
    from openbook.frechet import SampleSet

    N = N if N is not None else int(rng.integers(1, 21))
    K = K if K is not None else int(rng.integers(3, 6))
    d = d if d is not None else int(rng.integers(0, 4))
    shape = BookShape(d, K)
    leaves = rng.integers(0, K + 1, size=N)
    if integer:
        x0 = rng.integers(1, 4, size=N).astype(float)
        y = rng.integers(-3, 4, size=(N, d)).astype(float)
    else:
        x0 = rng.exponential(1.0, size=N) + 1e-3
        y = rng.normal(size=(N, d))
    # a skewed leaf distribution now and then so off-spine means show up
    if rng.random() < 0.4:
        heavy = int(rng.integers(1, K + 1))
        leaves = np.where(rng.random(N) < 0.6, heavy, leaves)
    x0 = np.where(leaves == 0, 0.0, x0)
    return SampleSet(shape, leaves, x0, y)


def fuzz_instances(n=1000, seed=7):
    rng = np.random.default_rng(seed)
    return [random_sample(rng, integer=bool(i % 3 == 0)) for i in range(n)]


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
