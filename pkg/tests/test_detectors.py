from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from scipy import stats

from conftest import random_grid
from jsdetect import detectors as det
from jsdetect.quantizer import DetectorGrid
from jsdetect.validation import batch_lag_covariances, mean_and_se


def _grid(points, L, D=1):
    return DetectorGrid(L=L, D=D, points=np.asarray(points, dtype=float), distortion=0.0, iterations=0, converged=True)


def _Phi(x):
    return 0.5 * (1 + math.erf(x / math.sqrt(2)))


def _brute_joint(pi, pj, offsets, shift):
    """P(z[s+shift+o_l] <= pi_l for all l, z[s+o_l] <= pj_l for all l) by listing sample times (D = 1)."""
    bound = {}
    for o, p in zip(offsets, pi):
        bound[shift + o] = min(bound.get(shift + o, math.inf), p)
    for o, p in zip(offsets, pj):
        bound[o] = min(bound.get(o, math.inf), p)
    out = 1.0
    for b in bound.values():
        out *= _Phi(b)
    return out


def _brute_sigma_lag(grid, offsets, shift):
    I = grid.I
    u = np.array([np.prod([_Phi(p) for p in grid.points[i]]) for i in range(I)])
    out = np.empty((I, I))
    for i, j in itertools.product(range(I), range(I)):
        out[i, j] = _brute_joint(grid.points[i], grid.points[j], offsets, shift) - u[i] * u[j]
    return out


def test_indicator_matches_brute_force():
    rng = np.random.default_rng(0)
    g = random_grid(rng, 3, 7)
    blocks = rng.standard_normal((500, 3))
    xi = det.indicators(g.points, blocks)
    for n in range(500):
        for i in range(7):
            assert xi[n, i] == all(blocks[n, l] <= g.points[i, l] for l in range(3))
        np.testing.assert_array_equal(det.indicator(g, blocks[n]), xi[n])
    # ties count as inside
    assert det.indicator(g, g.points[2])[2]
    with pytest.raises(ValueError):
        det.indicator(g, [0.0, 1.0])


def test_nominal_mean_examples():
    g = _grid([[0.0, 1.0], [0.0, 0.0]], 2)
    np.testing.assert_allclose(det.nominal_mean(g), [0.5 * 0.841344746068543, 0.25], atol=1e-12)


def test_sigma_single_point_at_origin():
    g = _grid([[0.0]], 1)
    np.testing.assert_allclose(det.nominal_covariance(g), [[0.25]], atol=1e-15)


@pytest.mark.parametrize("L", [1, 2, 3, 4])
def test_lag_covariance_matches_brute_force(L):
    g = random_grid(np.random.default_rng(L), L, 5)
    offsets = list(range(L))
    for t in range(-L - 1, L + 2):
        np.testing.assert_allclose(det.lag_covariance(g, t), _brute_sigma_lag(g, offsets, t), atol=1e-14)
        np.testing.assert_allclose(det.lag_covariance(g, -t), det.lag_covariance(g, t).T, atol=1e-15)
    for t in (L, L + 1, -L):
        assert not det.lag_covariance(g, t).any()


def test_offset_formula_generalizes_contiguous():
    g = random_grid(np.random.default_rng(9), 3, 6)
    for t in range(-3, 4):
        np.testing.assert_allclose(det.offset_lag_covariance(g, (0, 1, 2), t), det.lag_covariance(g, t), atol=1e-15)
    np.testing.assert_allclose(det.offset_covariance(g, (0, 1, 2)), det.nominal_covariance(g), atol=1e-15)


def test_npi_lag1_is_contiguous_pair_with_slots_reversed():
    g = random_grid(np.random.default_rng(3), 2, 5)
    flipped = _grid(g.points[:, ::-1], 2)
    np.testing.assert_allclose(
        det.offset_covariance(g, det.pair_offsets(1)), det.nominal_covariance(flipped), atol=1e-15
    )


@pytest.mark.parametrize("lag", [1, 2, 3])
def test_offset_covariance_brute_force(lag):
    g = random_grid(np.random.default_rng(20 + lag), 2, 4)
    offs = det.pair_offsets(lag)
    for s in range(-lag - 1, lag + 2):
        np.testing.assert_allclose(det.offset_lag_covariance(g, offs, s), _brute_sigma_lag(g, offs, s), atol=1e-14)


def test_sigma_monte_carlo_l2():
    g = random_grid(np.random.default_rng(5), 2, 4)
    est = batch_lag_covariances(g, 2_000_000, seed=1, max_lag=2, batches=50)
    m, se = mean_and_se(est)
    for t in range(3):
        z = np.abs(m[t] - det.lag_covariance(g, t)) / se[t]
        assert z.max() < 4.5


def test_sigma_permutation_invariant():
    g = random_grid(np.random.default_rng(6), 3, 6)
    perm = np.random.default_rng(1).permutation(6)
    gp = _grid(g.points[perm], 3)
    np.testing.assert_allclose(det.nominal_covariance(gp), det.nominal_covariance(g)[np.ix_(perm, perm)], atol=1e-15)


def test_score_properties():
    g = random_grid(np.random.default_rng(7), 2, 5)
    nm = det.NominalModel.from_grid(g)
    assert nm.score(nm.u_star, 50)[0] == pytest.approx(0.0, abs=1e-20)
    u = np.random.default_rng(0).random((100, 5))
    v = nm.score(u, 50)
    assert np.all(v >= 0)
    d = u[3] - nm.u_star
    direct = 50 * d @ np.linalg.solve(nm.sigma + nm.eps * np.eye(5), d)
    assert v[3] == pytest.approx(direct, rel=1e-9)


def test_sliding_window_exact():
    rng = np.random.default_rng(0)
    xi = rng.random((10_000, 4)) < 0.3
    w = det.SlidingWindow(4, 37)
    means = det._window_means(xi, 37)
    for n in range(xi.shape[0]):
        w.push(xi[n])
        if n >= 36:
            np.testing.assert_array_equal(w.counts, xi[n - 36 : n + 1].sum(axis=0))
            np.testing.assert_array_equal(w.mean, means[n - 36])


def test_js_stream_matches_run(small_grid):
    z = np.random.default_rng(1).standard_normal(400)
    d = det.JsDetector(small_grid, 50, 0.99)
    rows = [d.step(v) for v in z]
    tr = d.run(z)
    warm = [r for r in rows if r.warm]
    assert len(warm) == len(tr) == 400 - d.warmup
    assert d.warmup == 50 + 3 - 2 and tr.t[0] == d.warmup
    assert all(not r.alarm for r in rows if not r.warm)
    np.testing.assert_allclose([r.v for r in warm], tr.v, rtol=1e-10, atol=1e-10)
    np.testing.assert_array_equal([r.alarm for r in warm], tr.alarm)


def test_npi_stream_matches_run():
    g = random_grid(np.random.default_rng(2), 2, 6)
    z = np.random.default_rng(3).standard_normal(300)
    d = det.NpiDetector(g, 4, 40, 0.99)
    rows = [d.step(v) for v in z]
    tr = d.run(z)
    assert tr.v.shape == (300 - d.warmup, 3) and tr.lags == (1, 2, 3)
    warm = np.array([[r.v for r in rr] for rr in rows if rr[0].warm])
    np.testing.assert_allclose(warm, tr.v, rtol=1e-10, atol=1e-10)
    np.testing.assert_array_equal(tr.alarm, tr.lag_alarm.any(axis=1))
    with pytest.raises(ValueError):
        det.NpiDetector(random_grid(np.random.default_rng(0), 3, 4), 3, 10, 0.99)


def test_js_short_input_gives_empty_trace(small_grid):
    assert len(det.JsDetector(small_grid, 50, 0.99).run(np.zeros(10))) == 0


def test_js_null_moments():
    """Non-overlapping windows of i.i.d. N(0, 1): mean v ~ I, var ~ 2I."""
    g = random_grid(np.random.default_rng(4), 2, 5)
    T = 400
    z = np.random.default_rng(5).standard_normal(2000 * (T + 2))
    v = det.JsDetector(g, T, 0.99).run(z).v[:: T + 2]
    assert v.mean() == pytest.approx(5, rel=0.1)
    assert v.var() == pytest.approx(10, rel=0.2)


def test_js_detects_shifted_mean(small_grid):
    z = np.random.default_rng(6).standard_normal(2000) + 0.5
    tr = det.JsDetector(small_grid, 200, 0.99).run(z)
    assert tr.alarm.mean() > 0.9


def test_so_examples():
    so = det.SoDetector([[0.25]], 0.99)
    row = so.step([0.5])
    assert row.v == pytest.approx(1.0) and row.psi == pytest.approx(0.6826894921370861, abs=1e-12)
    lit = det.SoDetector([[0.25]], 0.99, literal=True)
    assert lit.step([0.5]).v == pytest.approx(0.0625)
    e = np.random.default_rng(0).standard_normal((1000, 2))
    G = np.array([[2.0, 0.3], [0.3, 1.0]])
    tr = det.SoDetector(G, 0.95).run(e)
    np.testing.assert_allclose(tr.v, np.einsum("ti,ij,tj->t", e, np.linalg.inv(G), e))
    np.testing.assert_allclose(tr.psi, stats.chi2.cdf(tr.v, 2), atol=1e-12)


def test_trace_summaries():
    tr = det.Trace("x", "js", np.arange(5, 15), np.arange(10.0), np.zeros(10), np.array([0, 1, 0, 0, 0, 0, 0, 1, 1, 0], bool))
    assert tr.false_alarm_rate(10) == pytest.approx(0.2)
    assert tr.detection_delay(10) == 2
    assert tr.detection_delay(None) is None
    assert tr.mean_v(lo=10) == pytest.approx(7.0)
    assert math.isnan(tr.mean_v(lo=100))
