from __future__ import annotations

import numpy as np
import pytest
from scipy import integrate
from scipy.spatial import cKDTree

from jsdetect import quantizer
from jsdetect.quantizer import DetectorGrid, cached_lloyd_grid, lloyd_grid

# Two-level Lloyd-Max quantizer of N(0, 1): +-sqrt(2/pi).
HALF_NORMAL_MEAN = 0.7978845608028654


def _lloyd_max_two_level():
    """Oracle: iterate the centroid conditions of the 2-level quantizer by quadrature."""
    dens = lambda x: np.exp(-x * x / 2) / np.sqrt(2 * np.pi)
    c = np.array([-1.5, 0.3])
    for _ in range(100):
        th = c.mean()
        lo = integrate.quad(lambda x: x * dens(x), -np.inf, th)[0] / integrate.quad(dens, -np.inf, th)[0]
        hi = integrate.quad(lambda x: x * dens(x), th, np.inf)[0] / integrate.quad(dens, th, np.inf)[0]
        c = np.array([lo, hi])
    return c


def test_oracle_frozen():
    np.testing.assert_allclose(_lloyd_max_two_level(), [-HALF_NORMAL_MEAN, HALF_NORMAL_MEAN], atol=1e-9)


def test_single_point_is_origin():
    g = lloyd_grid(1, 1, 1, sample_count=200_000, seed=0)
    assert abs(g.points[0, 0]) < 4 / np.sqrt(200_000)
    assert g.distortion == pytest.approx(1.0, abs=0.01)


def test_two_points_match_lloyd_max():
    g = lloyd_grid(1, 1, 2, sample_count=400_000, seed=1)
    np.testing.assert_allclose(np.sort(g.points[:, 0]), [-HALF_NORMAL_MEAN, HALF_NORMAL_MEAN], atol=0.01)
    assert g.converged


def test_distortion_nonincreasing_and_deterministic():
    a = lloyd_grid(2, 1, 12, sample_count=30_000, seed=4)
    b = lloyd_grid(2, 1, 12, sample_count=30_000, seed=4)
    np.testing.assert_array_equal(a.points, b.points)
    h = np.array(a.history)
    assert np.all(np.diff(h) <= 1e-12)
    assert a.points.shape == (12, 2)
    assert a.blocks.shape == (12, 2, 1)


def test_centroids_are_cell_means():
    g = lloyd_grid(2, 1, 8, sample_count=50_000, seed=2)
    samples = np.random.default_rng(99).standard_normal((400_000, 2))
    _, idx = cKDTree(g.points).query(samples)
    for i in range(g.I):
        cell = samples[idx == i]
        se = cell.std(axis=0).max() / np.sqrt(len(cell))
        np.testing.assert_allclose(cell.mean(axis=0), g.points[i], atol=0.02 + 5 * se)


def test_better_than_random_codebook():
    g = lloyd_grid(3, 1, 20, sample_count=40_000, seed=3)
    rng = np.random.default_rng(0)
    samples = rng.standard_normal((100_000, 3))
    d_lloyd = np.mean(cKDTree(g.points).query(samples)[0] ** 2)
    d_rand = np.mean(cKDTree(rng.standard_normal((20, 3))).query(samples)[0] ** 2)
    assert d_lloyd < d_rand


def test_not_converged_warns():
    with pytest.warns(RuntimeWarning):
        g = lloyd_grid(3, 1, 30, sample_count=20_000, seed=0, max_iters=2, rel_tol=0.0)
    assert not g.converged
    assert g.distortion == min(g.history)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        lloyd_grid(0, 1, 3)
    with pytest.raises(ValueError):
        lloyd_grid(1, 1, 10, sample_count=10)
    with pytest.raises(ValueError):
        DetectorGrid(L=1, D=1, points=np.array([[0.0], [0.0]]), distortion=0.0, iterations=0, converged=True)
    with pytest.raises(ValueError):
        DetectorGrid(L=2, D=1, points=np.zeros((3, 3)), distortion=0.0, iterations=0, converged=True)


def test_default_sample_count():
    assert quantizer.default_sample_count(10) == 100_000
    assert quantizer.default_sample_count(500) == 500_000


def test_cache_round_trip(tmp_path):
    g1, p1, hit1 = cached_lloyd_grid(tmp_path, 2, 1, 5, sample_count=5000, seed=8)
    g2, p2, hit2 = cached_lloyd_grid(tmp_path, 2, 1, 5, sample_count=5000, seed=8)
    assert (hit1, hit2) == (False, True)
    assert p1 == p2
    np.testing.assert_array_equal(g1.points, g2.points)
    assert g2.distortion == g1.distortion
    _, p3, hit3 = cached_lloyd_grid(tmp_path, 2, 1, 5, sample_count=5000, seed=9)
    assert not hit3 and p3 != p1


def test_cache_key_mismatch(tmp_path):
    g, path, _ = cached_lloyd_grid(tmp_path, 1, 1, 3, sample_count=3000, seed=1)
    other = quantizer.cache_key(1, 1, 3, 3000, 2)
    with pytest.raises(ValueError, match="mismatch"):
        quantizer.load_grid(path, other)
