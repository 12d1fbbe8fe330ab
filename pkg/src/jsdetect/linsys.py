"""Stationary linear-Gaussian plant and its steady-state Kalman filter.

The receiver runs the steady-state predictor

    x̂[t+1] = A x̂[t] + K (z[t] - C x̂[t])

and normalizes the innovation with the symmetric inverse square root of
its covariance ``Gamma``. :class:`WhitenedStream` performs that step and,
with :meth:`WhitenedStream.reconstruct`, its exact inverse: given a
prescribed normalized innovation it emits the measurement that produces it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.signal import lfilter

from jsdetect import statskit

DARE_TOL = 1e-12
DARE_MAX_ITERS = 100_000


class ConvergenceError(RuntimeError):
    """Raised when an iterative solve does not reach its tolerance."""


def _as_matrix(x, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(x, dtype=float))
    if m.ndim != 2:
        raise ValueError(f"{name} must be a matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


@dataclass(frozen=True)
class SystemModel:
    """x[t+1] = A x[t] + w[t],  y[t] = C x[t] + v[t],  w ~ N(0, Q), v ~ N(0, R)."""

    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        C = _as_matrix(self.C, "C")
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        nx = A.shape[0]
        if A.shape != (nx, nx):
            raise ValueError(f"A must be square, got {A.shape}")
        if C.shape[1] != nx:
            raise ValueError(f"C must have {nx} columns, got {C.shape}")
        ny = C.shape[0]
        if Q.shape != (nx, nx):
            raise ValueError(f"Q must be {nx}x{nx}, got {Q.shape}")
        if R.shape != (ny, ny):
            raise ValueError(f"R must be {ny}x{ny}, got {R.shape}")
        if not statskit.is_psd(Q):
            raise ValueError("Q must be symmetric positive semidefinite")
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            raise ValueError("R must be symmetric positive definite") from None
        if not np.allclose(R, R.T, rtol=1e-10, atol=1e-12):
            raise ValueError("R must be symmetric positive definite")
        radius = max(abs(np.linalg.eigvals(A)))
        if radius >= 1.0:
            raise ValueError(f"A must be strictly stable (spectral radius {radius:.6g} >= 1)")
        for name, m in (("A", A), ("C", C), ("Q", Q), ("R", R)):
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @classmethod
    def scalar(cls, a: float, c: float, q: float, r: float) -> "SystemModel":
        return cls(np.array([[a]]), np.array([[c]]), np.array([[q]]), np.array([[r]]))

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def meas_dim(self) -> int:
        return self.C.shape[0]


def riccati_map(model: SystemModel, Psi: np.ndarray) -> np.ndarray:
    """One application of the prediction-error Riccati recursion."""
    A, C, Q, R = model.A, model.C, model.Q, model.R
    APC = A @ Psi @ C.T
    G = C @ Psi @ C.T + R
    out = A @ Psi @ A.T - APC @ np.linalg.solve(G, APC.T) + Q
    return 0.5 * (out + out.T)


def dare_residual(model: SystemModel, Psi: np.ndarray) -> float:
    return float(np.max(np.abs(riccati_map(model, Psi) - Psi)))


def solve_dare(model: SystemModel, tol: float = DARE_TOL, max_iters: int = DARE_MAX_ITERS) -> np.ndarray:
    """Steady-state prediction-error covariance by fixed-point iteration from Psi = Q."""
    Psi = np.array(model.Q, dtype=float)
    residual = np.inf
    for _ in range(max_iters):
        nxt = riccati_map(model, Psi)
        residual = float(np.max(np.abs(nxt - Psi)))
        Psi = nxt
        if residual <= tol * max(1.0, float(np.max(np.abs(Psi)))):
            return Psi
    raise ConvergenceError(f"DARE iteration did not converge after {max_iters} steps (residual {residual:.3e})")


def steady_state_cov(model: SystemModel) -> np.ndarray:
    """Stationary state covariance P solving P = A P A^T + Q."""
    P = la.solve_discrete_lyapunov(model.A, model.Q)
    return 0.5 * (P + P.T)


def kalman_gain(model: SystemModel, Psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (K, Gamma) with Gamma = C Psi C^T + R and K = A Psi C^T Gamma^{-1}."""
    Gamma = model.C @ Psi @ model.C.T + model.R
    Gamma = 0.5 * (Gamma + Gamma.T)
    try:
        np.linalg.cholesky(Gamma)
    except np.linalg.LinAlgError:
        raise ValueError("innovation covariance is not positive definite") from None
    K = np.linalg.solve(Gamma, (model.A @ Psi @ model.C.T).T).T
    return K, Gamma


@dataclass(frozen=True)
class SteadyState:
    P: np.ndarray
    Psi: np.ndarray
    K: np.ndarray
    Gamma: np.ndarray
    Gamma_half: np.ndarray
    Gamma_half_inv: np.ndarray

    @classmethod
    def from_model(cls, model: SystemModel) -> "SteadyState":
        Psi = solve_dare(model)
        K, Gamma = kalman_gain(model, Psi)
        ss = cls(
            P=steady_state_cov(model),
            Psi=Psi,
            K=K,
            Gamma=Gamma,
            Gamma_half=statskit.sym_sqrt(Gamma),
            Gamma_half_inv=statskit.sym_inv_sqrt(Gamma),
        )
        for m in (ss.P, ss.Psi, ss.K, ss.Gamma, ss.Gamma_half, ss.Gamma_half_inv):
            m.setflags(write=False)
        return ss


def simulate(model: SystemModel, steady: SteadyState, horizon: int, seed=None, x0=None):
    """Sample a stationary trajectory; returns ``(x, y)`` of shapes (horizon, Dx), (horizon, D).

    ``x0`` overrides the N(0, P) draw of the initial state.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = np.random.default_rng(seed)
    nx, ny = model.state_dim, model.meas_dim
    # factors via eigh so PSD (singular) covariances are fine
    def _factor(S):
        w, V = np.linalg.eigh(S)
        return V * np.sqrt(np.clip(w, 0.0, None))

    if x0 is None:
        x0 = _factor(steady.P) @ rng.standard_normal(nx)
    w = rng.standard_normal((horizon, nx)) @ _factor(model.Q).T
    v = rng.standard_normal((horizon, ny)) @ _factor(model.R).T
    x = np.empty((horizon, nx))
    x[0] = x0
    A = model.A
    if nx == 1:
        x[:, 0] = lfilter([1.0], [1.0, -A[0, 0]], np.concatenate([x[0], w[:-1, 0]]))
    else:
        for t in range(horizon - 1):
            x[t + 1] = A @ x[t] + w[t]
    y = x @ model.C.T + v
    return x, y


@dataclass
class WhitenedStream:
    """Receiver-side steady-state Kalman predictor with innovation normalization.

    ``xhat`` is the one-step predictor x̂[t|t-1]; it starts at zero.
    """

    model: SystemModel
    steady: SteadyState
    xhat: np.ndarray = None
    t: int = 0

    def __post_init__(self):
        if self.xhat is None:
            self.xhat = np.zeros(self.model.state_dim)

    def predict(self) -> np.ndarray:
        return self.model.C @ self.xhat

    def innovation_step(self, z) -> np.ndarray:
        """Consume z[t]; return the raw innovation z[t] - C x̂[t|t-1]."""
        z = np.asarray(z, dtype=float).reshape(self.model.meas_dim)
        innov = z - self.model.C @ self.xhat
        self.xhat = self.model.A @ self.xhat + self.steady.K @ innov
        self.t += 1
        return innov

    def whiten_step(self, z) -> np.ndarray:
        return self.steady.Gamma_half_inv @ self.innovation_step(z)

    def reconstruct_step(self, zcheck) -> np.ndarray:
        """Emit the z[t] whose normalized innovation at this receiver equals ``zcheck``."""
        zcheck = np.asarray(zcheck, dtype=float).reshape(self.model.meas_dim)
        innov = self.steady.Gamma_half @ zcheck
        z = self.model.C @ self.xhat + innov
        self.xhat = self.model.A @ self.xhat + self.steady.K @ innov
        self.t += 1
        return z


def whiten(model: SystemModel, steady: SteadyState, z) -> np.ndarray:
    """Normalized innovations of a whole measurement sequence (fresh predictor)."""
    return _run(model, steady, z, "whiten")


def innovations(model: SystemModel, steady: SteadyState, z) -> np.ndarray:
    """Raw innovations of a whole measurement sequence (fresh predictor)."""
    return _run(model, steady, z, "innovation")


def reconstruct(model: SystemModel, steady: SteadyState, zcheck) -> np.ndarray:
    """Inverse of :func:`whiten`."""
    return _run(model, steady, zcheck, "reconstruct")


def _run(model, steady, seq, mode) -> np.ndarray:
    seq = np.asarray(seq, dtype=float).reshape(len(seq), model.meas_dim)
    A, C, K = model.A, model.C, steady.K
    Gh, Ghi = steady.Gamma_half, steady.Gamma_half_inv
    if model.state_dim == 1:
        return _run_scalar_state(A[0, 0], C, K, Gh, Ghi, seq, mode)
    out = np.empty_like(seq)
    xhat = np.zeros(model.state_dim)
    # hand-inlined copy of the WhitenedStream recursions; kept in lockstep by tests
    for t in range(seq.shape[0]):
        if mode == "reconstruct":
            innov = Gh @ seq[t]
            out[t] = C @ xhat + innov
        else:
            innov = seq[t] - C @ xhat
            out[t] = innov if mode == "innovation" else Ghi @ innov
        xhat = A @ xhat + K @ innov
    return out


def _run_scalar_state(a, C, K, Gh, Ghi, seq, mode) -> np.ndarray:
    # with one state the predictor is a first-order IIR filter
    if mode == "reconstruct":
        innov = seq @ Gh.T
        xhat = lfilter([0.0, 1.0], [1.0, -a], innov @ K[0])
        return xhat[:, None] * C[:, 0] + innov
    f = a - float(K[0] @ C[:, 0])
    xhat = lfilter([0.0, 1.0], [1.0, -f], seq @ K[0])
    innov = seq - xhat[:, None] * C[:, 0]
    return innov if mode == "innovation" else innov @ Ghi.T
