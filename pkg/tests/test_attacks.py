from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from jsdetect import attacks, linsys
from jsdetect.attacks import AttackScenario, PairwiseKernel, UncorrelatedKernel


def test_uncorrelated_step_equals_run():
    y = np.random.default_rng(0).standard_normal((500, 1))
    a = UncorrelatedKernel(1, 3, 0.7, np.random.default_rng(1))
    b = UncorrelatedKernel(1, 3, 0.7, np.random.default_rng(1))
    stepped = np.array([a.step(v) for v in y])
    ran = np.vstack([b.run(y[:123]), b.run(y[123:])])
    np.testing.assert_array_equal(stepped, ran)


def test_uncorrelated_small_upsilon_is_sign_flip():
    y = np.random.default_rng(0).standard_normal((1000, 1))
    out = UncorrelatedKernel(1, 1, 1e-9, np.random.default_rng(2)).run(y)
    np.testing.assert_allclose(np.abs(out), np.abs(y), atol=1e-7)


def test_uncorrelated_dependence_structure():
    y = np.random.default_rng(3).standard_normal((400_000, 1))
    z = UncorrelatedKernel(1, 1, 2**-0.5, np.random.default_rng(4)).run(y)[:, 0]
    se = 1 / np.sqrt(z.size)
    assert abs(np.mean(z[1:] * z[:-1])) < 4 * se
    # squares are correlated at lag tau: corr(r_t^2, r_{t-1}^2) = upsilon^2 = 0.5 (Gaussian AR(1))
    c = np.corrcoef(z[1:] ** 2, z[:-1] ** 2)[0, 1]
    assert c == pytest.approx(0.5, abs=0.02)


def test_binary_gamma():
    y = np.random.default_rng(0).standard_normal((2000, 1))
    z = UncorrelatedKernel(1, 1, 0.5, np.random.default_rng(0), gamma="binary").run(y)
    assert 0.4 < np.mean(z == 0) < 0.6


def test_pairwise_triple_product_nonnegative():
    y = np.random.default_rng(5).standard_normal(10_001)
    k = PairwiseKernel(np.random.default_rng(6))
    hist = [k.prev2, k.prev1]
    z = k.run(y)[:, 0]
    full = np.concatenate([hist, z])
    odd = np.arange(0, z.size, 2) + 2          # first emitted step is odd
    assert np.all(full[odd] * full[odd - 1] * full[odd - 2] >= 0)
    np.testing.assert_array_equal(np.abs(z), np.abs(y))


def test_pairwise_pairs_look_independent():
    y = np.random.default_rng(7).standard_normal(400_000)
    z = PairwiseKernel(np.random.default_rng(8)).run(y)[:, 0]
    n = z.size
    for lag in (1, 2):
        a, b = z[lag:], z[:-lag]
        for pa, pb in [(0.0, 0.0), (-0.5, 1.0), (1.0, -1.0), (0.3, 0.3)]:
            p = np.mean((a <= pa) & (b <= pb))
            q = stats.norm.cdf(pa) * stats.norm.cdf(pb)
            assert abs(p - q) < 4 * np.sqrt(q * (1 - q) / n)
    # but the triple is not jointly Gaussian
    assert np.mean(z[2:] * z[1:-1] * z[:-2]) > 0.2


def test_pairwise_rejects_vector():
    with pytest.raises(ValueError):
        PairwiseKernel(np.random.default_rng(0), D=2)


@pytest.mark.parametrize("kind", ["uncorrelated", "pairwise"])
def test_apply_scenario_receiver_sees_kernel_output(model, steady, kind):
    _, y = linsys.simulate(model, steady, 3000, seed=1)
    sc = AttackScenario(kind=kind, onset=1000, seed=5)
    z = attacks.apply_scenario(model, steady, sc, y)
    np.testing.assert_array_equal(z[:1000], y[:1000])
    seen = linsys.whiten(model, steady, z)
    rng = np.random.default_rng(5)
    kern = UncorrelatedKernel(1, 1, 2**-0.5, rng) if kind == "uncorrelated" else PairwiseKernel(rng)
    expect = kern.run(linsys.whiten(model, steady, y)[1000:])
    np.testing.assert_allclose(seen[1000:], expect, atol=1e-9)
    np.testing.assert_allclose(attacks.attacked_whitened(model, steady, sc, y), seen)


def test_apply_scenario_is_causal(model, steady):
    _, y = linsys.simulate(model, steady, 800, seed=2)
    sc = AttackScenario(kind="uncorrelated", onset=100, seed=3)
    z1 = attacks.apply_scenario(model, steady, sc, y)
    y2 = y.copy()
    y2[500:] += 10.0
    z2 = attacks.apply_scenario(model, steady, sc, y2)
    np.testing.assert_array_equal(z1[:500], z2[:500])
    assert not np.allclose(z1[500:], z2[500:])


def test_bias_and_replay(model, steady):
    _, y = linsys.simulate(model, steady, 200, seed=3)
    z = attacks.apply_scenario(model, steady, AttackScenario(kind="bias", onset=50, offset=(2.0,)), y)
    np.testing.assert_allclose(z[50:] - y[50:], 2.0)
    np.testing.assert_array_equal(z[:50], y[:50])
    z = attacks.apply_scenario(model, steady, AttackScenario(kind="replay", onset=100, window=30), y)
    np.testing.assert_array_equal(z[100:130], y[70:100])
    np.testing.assert_array_equal(z[130:160], y[70:100])
    np.testing.assert_array_equal(attacks.apply_scenario(model, steady, AttackScenario(), y), y)


def test_replay_incomplete_capture():
    k = attacks.ReplayKernel(3)
    k.capture([1.0])
    with pytest.raises(ValueError):
        k.step()


@pytest.mark.parametrize(
    "kw",
    [dict(kind="bogus"), dict(kind="uncorrelated", upsilon=1.0), dict(kind="uncorrelated", tau=0),
     dict(kind="replay", window=0), dict(kind="bias", onset=-1), dict(kind="uncorrelated", gamma="x")],
)
def test_scenario_validation(kw):
    with pytest.raises(ValueError):
        AttackScenario(**kw)
