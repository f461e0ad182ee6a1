import io
import math

import numpy as np
import pytest

from openbook.frechet import folded_averages
from openbook.geometry import BookShape
from openbook.measures import (
    BookMeasure,
    PointMassSet,
    Verdict,
    center,
    costal_covariance,
    spinal_covariance,
)
from openbook.simulate import (
    SeedStream,
    clt_summary,
    lln_tests,
    run_clt,
    run_lln,
    sample_costal_limit,
    sample_gaussian,
    sample_measure,
    sample_spinal_limit,
    sample_spinocostal_limit,
    semispinal_check,
    write_clt_csv,
    write_lln_csv,
)
from openbook.stats import compare_covariance

from conftest import exp_leaves_measure, generic_measure, spider_measure


def test_seed_stream_reproducible_and_distinct():
    a = SeedStream(42).spawn(0).spawn(7).generator().random(5)
    b = SeedStream(42).spawn(0).spawn(7).generator().random(5)
    c = SeedStream(42).spawn(0).spawn(8).generator().random(5)
    d = SeedStream(43).spawn(0).spawn(7).generator().random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)
    with pytest.raises(ValueError):
        SeedStream(-1)


def test_substreams_uncorrelated():
    root = SeedStream(2012)
    x = np.stack([root.spawn(i).generator().standard_normal(20000) for i in range(20)])
    corr = np.corrcoef(x)
    off = corr[~np.eye(20, dtype=bool)]
    assert np.abs(off).max() < 5 / math.sqrt(20000)


def test_sample_measure_frequencies():
    shape = BookShape(0, 4)
    w0, w = 0.1, (0.4, 0.2, 0.2, 0.1)
    leaves = [PointMassSet([[1.0], [2.0]], [0.5, 0.5]) for _ in w]
    m = BookMeasure.from_components(shape, leaves, w, w0=w0)
    n = 10**5
    s = sample_measure(m, SeedStream(1), n)
    counts = np.bincount(s.leaves, minlength=5)
    for p, c in zip((w0,) + w, counts):
        assert abs(c / n - p) <= 4 * math.sqrt(p * (1 - p) / n)


def test_sample_measure_no_spine_and_deterministic():
    m = exp_leaves_measure([0.5, 0.3, 0.2], d=2)
    s = sample_measure(m, SeedStream(5), 5000)
    assert np.all(s.leaves > 0) and np.all(s.x0 > 0)
    t = sample_measure(m, SeedStream(5), 5000)
    np.testing.assert_array_equal(s.leaves, t.leaves)
    np.testing.assert_array_equal(s.y, t.y)


def test_sample_gaussian():
    np.testing.assert_array_equal(sample_gaussian(np.zeros((3, 3)), SeedStream(1), 10), np.zeros((10, 3)))
    x = sample_gaussian(np.eye(3), SeedStream(2), 10**6)
    assert compare_covariance(x, np.eye(3)).passed
    u = np.array([1.0, 2.0, -1.0])
    x = sample_gaussian(np.outer(u, u), SeedStream(3), 1000)
    resid = x - np.outer(x @ u / (u @ u), u)
    assert np.abs(resid).max() < 1e-10
    assert sample_gaussian(np.zeros((0, 0)), SeedStream(1), 4).shape == (4, 0)
    with pytest.raises(ValueError, match="symmetric"):
        sample_gaussian([[1.0, 0.5], [0.0, 1.0]], SeedStream(1), 3)
    with pytest.raises(ValueError, match="indefinite"):
        sample_gaussian([[1.0, 2.0], [2.0, 1.0]], SeedStream(1), 3)


def partly_measure(d=1):
    return exp_leaves_measure([0.5, 0.25, 0.25], d=d)


def test_limit_samplers_shapes():
    assert sample_spinal_limit(spider_measure(), SeedStream(1), 7).shape == (7, 0)
    m = partly_measure(d=2)
    assert sample_costal_limit(m, 1, SeedStream(1), 7).shape == (7, 3)
    s = sample_spinocostal_limit(m, 1, SeedStream(1), 7)
    assert set(np.unique(s.leaves)) <= {0, 1}


def test_spinocostal_spine_mass_is_half():
    n = 10**5
    s = sample_spinocostal_limit(partly_measure(), 1, SeedStream(8), n)
    hits = int(np.sum(s.leaves == 0))
    assert abs(hits / n - 0.5) <= 4 * math.sqrt(0.25 / n)


def test_spinocostal_warns_off_mode():
    with pytest.warns(UserWarning):
        sample_spinocostal_limit(exp_leaves_measure([0.6, 0.2, 0.2]), 1, SeedStream(1), 10)


def test_semispinal_second_moment_two_ways():
    # E[y y^T; on spine] under h_k versus g_S minus the x0 > 0 part of g_k
    m = center(generic_measure())
    n = 10**6
    k = 2
    # the generic measure is not partly sticky; the identity holds for any covariances
    with pytest.warns(UserWarning):
        push = sample_spinocostal_limit(m, k, SeedStream(1), n)
    spinal = sample_spinal_limit(m, SeedStream(2), n)
    costal = sample_costal_limit(m, k, SeedStream(3), n)

    def outer(y, mask):
        return (y[:, :, None] * y[:, None, :] * mask[:, None, None]).reshape(len(y), -1)

    a = outer(push.y, push.leaves == 0)
    b = outer(spinal, np.ones(n))
    c = outer(costal[:, 1:], costal[:, 0] > 0)
    est1 = a.mean(axis=0)
    est2 = b.mean(axis=0) - c.mean(axis=0)
    se = np.sqrt((a.var(axis=0) + b.var(axis=0) + c.var(axis=0)) / n)
    assert np.all(np.abs(est1 - est2) <= 4 * se)
    # and the full spinal covariance sits inside the costal one
    np.testing.assert_allclose(costal_covariance(m, k)[1:, 1:], spinal_covariance(m))


def test_semispinal_boxes_d0():
    m = exp_leaves_measure([0.5, 0.25, 0.25], d=0)
    [r] = semispinal_check(m, 1, SeedStream(4), 10**5)
    assert r.passed


# -- LLN ------------------------------------------------------------------------------


def test_lln_sticky_trend():
    m = center(exp_leaves_measure([1 / 3] * 3))
    rep = run_lln(m, SeedStream(10), (10, 100, 1000), 200)
    assert rep.classification.verdict is Verdict.STICKY
    f = rep.fractions
    assert f[-1] > f[0]
    assert all(t.passed for t in lln_tests(rep))


def test_lln_nonsticky():
    m = exp_leaves_measure([0.6, 0.2, 0.2])
    rep = run_lln(m, SeedStream(11), (10, 100, 1000, 10000), 100)
    assert rep.fractions[-1] >= 0.99
    assert np.all(rep.first_entry[rep.event[:, -1]] > 0)
    assert np.all(rep.first_entry[~rep.event[:, -1]] == -1)


def test_lln_location_matches_folded_means():
    shape = BookShape(0, 3)
    leaves = [PointMassSet([[1.0], [2.0]], [0.5, 0.5]) for _ in range(3)]
    m = BookMeasure.from_components(shape, leaves, [1 / 3] * 3)
    stream = SeedStream(12)
    cps = (3, 6, 30, 300)
    rep = run_lln(m, stream, cps, 50)
    for i in range(50):
        s = sample_measure(m, stream.spawn(0).spawn(i), cps[-1])
        for j, n in enumerate(cps):
            first = folded_averages(s.prefix(n))
            assert (rep.locations[i, j] == 0) == bool(np.all(first <= 0))
            assert rep.coords[i, j, 0] == max(first.max(), 0.0)


def test_lln_validates_checkpoints():
    with pytest.raises(ValueError):
        run_lln(spider_measure(), SeedStream(1), (10, 10), 5)


def test_lln_csv_schema():
    rep = run_lln(exp_leaves_measure([0.6, 0.2, 0.2]), SeedStream(1), (5, 50), 3)
    buf = io.StringIO()
    write_lln_csv(buf, rep)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "replicate,checkpoint,location_class,x0,y1"
    assert len(lines) == 1 + 3 * 2


# -- CLT ------------------------------------------------------------------------------


def test_clt_spider_sticky_limit_is_the_spine():
    rep = run_clt(spider_measure(), SeedStream(20), 10**4, 50)
    assert rep.mode == "sticky"
    assert np.all(rep.locations == 0)
    assert rep.statistic.shape == (50, 0)
    assert rep.passed


def test_clt_requires_centered():
    with pytest.raises(ValueError, match="not centered"):
        run_clt(exp_leaves_measure([1 / 3] * 3, spine_mean=1.0), SeedStream(1), 100, 10)


def test_clt_partly_sticky_has_fraction_test():
    rep = run_clt(partly_measure(), SeedStream(21), 1000, 400)
    names = [t.name for t in rep.tests]
    assert "fraction_in_open_leaf_1" in names
    s = clt_summary(rep)
    assert s["limit"] == "partly-sticky" and 0 < s["leaf_fraction"] < 1


def test_clt_spine_part_is_classical():
    # in every mode the spine coordinates are sqrt(N) times the projected mean
    m = center(exp_leaves_measure([0.6, 0.2, 0.2], spine_mean=0.3))
    rep = run_clt(m, SeedStream(22), 500, 300)
    for i in (0, 17, 299):
        s = sample_measure(m, SeedStream(22).spawn(0).spawn(i), 500)
        assert rep.coords[i, 1] == pytest.approx(math.sqrt(500) * s.y.mean(axis=0)[0], rel=1e-12, abs=1e-12)


def test_reproducible_across_workers():
    m = center(generic_measure())
    a = run_clt(m, SeedStream(23), 200, 40, workers=1)
    b = run_clt(m, SeedStream(23), 200, 40, workers=4)
    np.testing.assert_array_equal(a.coords, b.coords)
    np.testing.assert_array_equal(a.reference, b.reference)
    ba, bb = io.StringIO(), io.StringIO()
    write_clt_csv(ba, a)
    write_clt_csv(bb, b)
    assert ba.getvalue() == bb.getvalue()
