"""Statistical self-checks with independent Monte Carlo oracles.

Each check returns a :class:`CheckResult` holding the measured value, the
tolerance it was held to and a pass flag. ``run_checks`` bundles the default
set behind ``jsdetect validate``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from jsdetect import linsys
from jsdetect.detectors import JsDetector, SoDetector, indicators, nominal_covariance, nominal_mean
from jsdetect.quantizer import DetectorGrid, lloyd_grid


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def as_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = bool(d["passed"])
        d["value"] = float(d["value"])
        d["tolerance"] = float(d["tolerance"])
        return d


def batch_lag_covariances(grid: DetectorGrid, n: int, seed, max_lag: int, offsets=None, batches: int = 100) -> np.ndarray:
    """Per-batch Monte Carlo estimates of Sigma(t), t = 0..max_lag, shape (batches, max_lag + 1, I, I).

    The indicator process is driven by ``n`` i.i.d. N(0, I) samples split into
    independent sequences. ``offsets`` (default 0..L-1) places block slot l at
    time s + offsets[l]. Centering uses the exact nominal mean.
    """
    offsets = list(range(grid.L)) if offsets is None else [int(o) for o in offsets]
    lo, hi = min(offsets), max(offsets)
    rng = np.random.default_rng(seed)
    u = nominal_mean(grid)
    m = n // batches
    count = m - (hi - lo)
    est = np.empty((batches, max_lag + 1, grid.I, grid.I))
    for b in range(batches):
        z = rng.standard_normal((m, grid.D))
        blocks = np.concatenate([z[o - lo : o - lo + count] for o in offsets], axis=1)
        c = indicators(grid.points, blocks).astype(float) - u
        for t in range(max_lag + 1):
            est[b, t] = c[t:].T @ c[: count - t] / (count - t)
    return est


def mean_and_se(est: np.ndarray):
    return est.mean(axis=0), est.std(axis=0, ddof=1) / np.sqrt(est.shape[0])


def long_run_from_lags(est: np.ndarray, span: int) -> np.ndarray:
    """sum_{|t| <= span} Sigma(t) per batch, using Sigma(-t) = Sigma(t)^T."""
    out = est[:, 0].copy()
    for t in range(1, span + 1):
        out += est[:, t] + np.swapaxes(est[:, t], 1, 2)
    return out


def mc_long_run_covariance(grid: DetectorGrid, n: int, seed, offsets=None, batches: int = 100):
    """Monte Carlo long-run covariance of the indicator process and its per-entry standard errors."""
    offsets = list(range(grid.L)) if offsets is None else list(offsets)
    span = max(offsets) - min(offsets)
    est = batch_lag_covariances(grid, n, seed, span, offsets, batches)
    return mean_and_se(long_run_from_lags(est, span))


def check_sigma(grid: DetectorGrid, sigma=None, n: int = 1_000_000, seed=0, z_tol: float | None = None, offsets=None) -> CheckResult:
    """Closed-form Sigma against Monte Carlo, entrywise in standard errors.

    With ``z_tol=None`` the bound is a Bonferroni 1% family-wise level over the
    distinct entries. ``sigma`` overrides the closed form (negative controls).
    """
    if sigma is None:
        from jsdetect.detectors import offset_covariance

        sigma = nominal_covariance(grid) if offsets is None else offset_covariance(grid, offsets)
    mc, se = mc_long_run_covariance(grid, n, seed, offsets)
    iu = np.triu_indices(grid.I)
    z = np.abs(np.asarray(sigma)[iu] - mc[iu]) / se[iu]
    if z_tol is None:
        z_tol = float(stats.norm.isf(0.005 / iu[0].size))
    worst = float(z.max())
    return CheckResult("sigma_closed_form_vs_monte_carlo", worst <= z_tol, worst, z_tol, f"max |z| over {iu[0].size} entries, n={n}")


def check_round_trip(model: linsys.SystemModel, steps: int = 10_000, seed=0, tol: float = 1e-9) -> CheckResult:
    steady = linsys.SteadyState.from_model(model)
    _, y = linsys.simulate(model, steady, steps, seed=seed)
    rx = linsys.WhitenedStream(model, steady)
    zc = np.array([rx.whiten_step(v) for v in y])
    tx = linsys.WhitenedStream(model, steady)
    back = np.array([tx.reconstruct_step(v) for v in zc])
    dev = float(np.max(np.abs(back - y)))
    return CheckResult("whiten_reconstruct_round_trip", dev <= tol, dev, tol, f"{steps} steps")


def check_dare(model: linsys.SystemModel, tol: float = 1e-9) -> CheckResult:
    Psi = linsys.solve_dare(model)
    res = linsys.dare_residual(model, Psi)
    return CheckResult("dare_residual", res <= tol, res, tol)


def null_js_samples(model, grid, T, steps, seed, alpha=0.99):
    """v and psi of a nominal JS run, subsampled at stride T + L (non-overlapping windows)."""
    steady = linsys.SteadyState.from_model(model)
    _, y = linsys.simulate(model, steady, steps, seed=seed)
    trace = JsDetector(grid, T, alpha).run(linsys.whiten(model, steady, y))
    stride = T + grid.L
    return trace.v[::stride], trace.psi[::stride]


def check_null_calibration(model, grid, T, steps, seed, mean_rtol=0.10, var_rtol=0.20) -> list[CheckResult]:
    v, _ = null_js_samples(model, grid, T, steps, seed)
    I = grid.I
    mean_err = abs(v.mean() - I) / I
    var_err = abs(v.var(ddof=1) - 2 * I) / (2 * I)
    detail = f"{v.size} windows, I={I}, T={T}"
    return [
        CheckResult("null_mean_v", mean_err <= mean_rtol, mean_err, mean_rtol, "relative error of mean v vs I; " + detail),
        CheckResult("null_var_v", var_err <= var_rtol, var_err, var_rtol, "relative error of var v vs 2I; " + detail),
    ]


def batch_se(x: np.ndarray, batch: int) -> float:
    """Standard error of the mean of a serially dependent series, by non-overlapping batch means."""
    nb = x.size // batch
    means = x[: nb * batch].reshape(nb, batch).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(nb))


def check_so_null(model, steps, seed, sigmas=3.0) -> CheckResult:
    steady = linsys.SteadyState.from_model(model)
    _, y = linsys.simulate(model, steady, steps, seed=seed)
    v = SoDetector(steady.Gamma, 0.99).run(linsys.innovations(model, steady, y)).v
    D = model.meas_dim
    z = abs(v.mean() - D) / batch_se(v, 1000)
    return CheckResult("so_null_mean", z <= sigmas, z, sigmas, f"|mean v - D| in standard errors, {steps} steps")


def run_checks(model: linsys.SystemModel | None = None, seed: int = 0) -> list[CheckResult]:
    """Default self-test suite (a few seconds)."""
    if model is None:
        model = linsys.SystemModel.scalar(0.98, 1.0, 0.1, 0.1)
    results = [check_dare(model), check_round_trip(model, seed=seed)]
    small = lloyd_grid(2, model.meas_dim, 4, sample_count=20_000, seed=seed)
    results.append(check_sigma(small, n=1_000_000, seed=seed + 1))
    grid = lloyd_grid(3, model.meas_dim, 10, sample_count=20_000, seed=seed + 2)
    results += check_null_calibration(model, grid, T=300, steps=1_000_000, seed=seed + 3)
    results.append(check_so_null(model, 200_000, seed + 4))
    return results
