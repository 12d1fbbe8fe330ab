"""Probability functions and small symmetric-matrix helpers."""

from __future__ import annotations

import numpy as np
import scipy.linalg as la
from scipy import special

# eigenvalues at or below this (relative to the largest) count as non-PD
PD_RTOL = 1e-12


def std_normal_cdf(x):
    """Standard normal CDF, elementwise. Accepts scalars or arrays, +/-inf included."""
    out = special.ndtr(np.asarray(x, dtype=float))
    return float(out) if out.ndim == 0 else out


def std_normal_cdf_vec(rho) -> float:
    """CDF of N(0, I) at ``rho``; with identity covariance it is the product of marginals."""
    rho = np.asarray(rho, dtype=float).ravel()
    if rho.size == 0:
        raise ValueError("std_normal_cdf_vec needs at least one coordinate")
    return float(np.prod(special.ndtr(rho)))


def chi_squared_cdf(x, k: int):
    """CDF of a chi-squared law with ``k`` degrees of freedom (regularized lower gamma)."""
    if int(k) != k or k < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {k!r}")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("chi-squared CDF is defined for x >= 0 only")
    out = special.gammainc(k / 2.0, x / 2.0)
    return float(out) if out.ndim == 0 else out


def _check_square_symmetric(M: np.ndarray, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {M.shape}")
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12):
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (M + M.T)


def sym_sqrt(M) -> np.ndarray:
    """Symmetric positive-definite square root S of M, with S @ S == M."""
    M = _check_square_symmetric(M, "M")
    w, V = np.linalg.eigh(M)
    if w[0] <= PD_RTOL * max(abs(w[-1]), 1.0):
        raise ValueError(f"matrix is not positive definite (min eigenvalue {w[0]:.3e})")
    S = (V * np.sqrt(w)) @ V.T
    return 0.5 * (S + S.T)


def sym_inv_sqrt(M) -> np.ndarray:
    """Symmetric inverse square root of a PD matrix."""
    M = _check_square_symmetric(M, "M")
    w, V = np.linalg.eigh(M)
    if w[0] <= PD_RTOL * max(abs(w[-1]), 1.0):
        raise ValueError(f"matrix is not positive definite (min eigenvalue {w[0]:.3e})")
    S = (V / np.sqrt(w)) @ V.T
    return 0.5 * (S + S.T)


def solve_spd(M, b) -> np.ndarray:
    """Solve M x = b for symmetric positive-definite M (Cholesky).

    Raises ``np.linalg.LinAlgError`` when M is not numerically PD.
    """
    M = _check_square_symmetric(M, "M")
    b = np.asarray(b, dtype=float)
    c, low = la.cho_factor(M, lower=True)
    return la.cho_solve((c, low), b)


def is_psd(M, tol: float = 1e-12) -> bool:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12):
        return False
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    return bool(w[0] >= -tol * max(abs(w[-1]), 1.0))
