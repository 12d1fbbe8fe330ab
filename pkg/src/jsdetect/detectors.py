"""JS, NPI and SO attack detectors operating on normalized innovations.

JS compares the windowed empirical CDF of length-L blocks of normalized
innovations with the standard-normal product CDF at the grid points. The
deviation is scored by the quadratic form

    v = T (u - u*)^T Sigma^{-1} (u - u*)

which is asymptotically chi-squared with I degrees of freedom under nominal
operation. NPI runs the same machinery on the pairs (z[t], z[t-l]), one
statistic per lag l. SO is the per-sample chi-squared innovation test.

Every detector has a streaming ``step`` and a vectorized ``run``. Both
produce the same statistics (``run`` is what the harness uses).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from jsdetect import statskit
from jsdetect.quantizer import DetectorGrid

SIGMA_REG = 1e-10
# rows per chunk when building indicator matrices
_CHUNK = 100_000
# the streaming window re-derives its count vector from the buffer this often
_RECHECK_EVERY = 4096


# ---------------------------------------------------------------------------
# indicator vectors and nominal moments


def indicator(grid: DetectorGrid, block) -> np.ndarray:
    """xi[i] = 1 iff every slot of ``block`` is componentwise <= the matching slot of point i."""
    block = np.asarray(block, dtype=float).ravel()
    if block.size != grid.L * grid.D:
        raise ValueError(f"block must have {grid.L * grid.D} entries, got {block.size}")
    return np.all(block[None, :] <= grid.points, axis=1)


def indicators(points: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    """Indicator matrix (N, I) for N flattened blocks against I flattened points."""
    blocks = np.asarray(blocks, dtype=float)
    out = np.empty((blocks.shape[0], points.shape[0]), dtype=bool)
    for s in range(0, blocks.shape[0], _CHUNK):
        chunk = blocks[s : s + _CHUNK]
        out[s : s + _CHUNK] = np.all(chunk[:, None, :] <= points[None, :, :], axis=2)
    return out


def _slot_cdf(grid: DetectorGrid) -> np.ndarray:
    """Per-coordinate standard normal CDF of the points, shape (I, L, D)."""
    return special.ndtr(grid.blocks)


def nominal_mean(grid: DetectorGrid) -> np.ndarray:
    """u*[i] = prod_l Phi(rho_{i,l}), the nominal probability of each indicator."""
    return np.prod(_slot_cdf(grid).reshape(grid.I, -1), axis=1)


def lag_covariance(grid: DetectorGrid, t: int) -> np.ndarray:
    """Sigma(t) = E[(xi_t - u*)(xi_0 - u*)^T] for contiguous L-blocks under nominal statistics.

    Block t starts t samples after block 0, so the two share L - |t| samples;
    on those, the joint indicator reduces to Phi of the componentwise minimum.
    Zero for |t| >= L.
    """
    L, I = grid.L, grid.I
    if abs(t) >= L:
        return np.zeros((I, I))
    Phi = _slot_cdf(grid)                       # (I, L, D)
    phi = np.prod(Phi, axis=2)                  # (I, L): Phi_{0,I} of each D-slot
    u = np.prod(phi, axis=1)
    if t >= 0:
        # i-slots L-t..L-1 and j-slots 0..t-1 stand alone; i-slot tau overlaps j-slot t+tau
        alone = np.prod(phi[:, L - t :], axis=1)[:, None] * np.prod(phi[:, :t], axis=1)[None, :]
        both = np.minimum(Phi[:, None, : L - t, :], Phi[None, :, t:, :])
    else:
        s = -t
        # i-slots 0..s-1 and j-slots L-s..L-1 stand alone; i-slot tau+s overlaps j-slot tau
        alone = np.prod(phi[:, :s], axis=1)[:, None] * np.prod(phi[:, L - s :], axis=1)[None, :]
        both = np.minimum(Phi[:, None, s:, :], Phi[None, :, : L - s, :])
    joint = alone * np.prod(both.reshape(I, I, -1), axis=2)
    return joint - np.outer(u, u)


def nominal_covariance(grid: DetectorGrid) -> np.ndarray:
    """Long-run covariance Sigma = sum_{|t| < L} Sigma(t) of the indicator process."""
    sigma = sum(lag_covariance(grid, t) for t in range(-grid.L + 1, grid.L))
    return 0.5 * (sigma + sigma.T)


def offset_lag_covariance(grid: DetectorGrid, offsets, shift: int) -> np.ndarray:
    """Sigma(shift) for blocks whose slot l holds the sample at time s + offsets[l].

    Generalizes :func:`lag_covariance` (contiguous blocks have offsets 0..L-1)
    to arbitrary distinct offsets, e.g. the NPI pair (z[t], z[t-l]).
    """
    offsets = [int(o) for o in offsets]
    if len(offsets) != grid.L or len(set(offsets)) != grid.L:
        raise ValueError("need one distinct offset per block slot")
    I = grid.I
    Phi = _slot_cdf(grid)
    u = np.prod(Phi.reshape(I, -1), axis=1)
    slots_i = {shift + o: l for l, o in enumerate(offsets)}
    slots_j = {o: l for l, o in enumerate(offsets)}
    joint = np.ones((I, I))
    for time in sorted(set(slots_i) | set(slots_j)):
        li, lj = slots_i.get(time), slots_j.get(time)
        if li is not None and lj is not None:
            joint *= np.prod(np.minimum(Phi[:, None, li, :], Phi[None, :, lj, :]), axis=2)
        elif li is not None:
            joint *= np.prod(Phi[:, li, :], axis=1)[:, None]
        else:
            joint *= np.prod(Phi[:, lj, :], axis=1)[None, :]
    return joint - np.outer(u, u)


def offset_covariance(grid: DetectorGrid, offsets) -> np.ndarray:
    span = max(offsets) - min(offsets)
    sigma = sum(offset_lag_covariance(grid, offsets, s) for s in range(-span, span + 1))
    return 0.5 * (sigma + sigma.T)


@dataclass(frozen=True)
class NominalModel:
    """Nominal mean and long-run covariance of the indicator process, factorized for scoring."""

    u_star: np.ndarray
    sigma: np.ndarray
    eps: float
    chol: np.ndarray = field(repr=False)

    @classmethod
    def from_moments(cls, u_star, sigma, reg: float = SIGMA_REG) -> "NominalModel":
        u_star = np.asarray(u_star, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        if sigma.shape != (u_star.size, u_star.size):
            raise ValueError("sigma shape does not match u_star")
        if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-14):
            raise ValueError("sigma must be symmetric")
        eps = reg * float(np.trace(sigma)) / u_star.size
        chol = la.cholesky(sigma + eps * np.eye(u_star.size), lower=True)
        for a in (u_star, sigma, chol):
            a.setflags(write=False)
        return cls(u_star=u_star, sigma=sigma, eps=eps, chol=chol)

    @classmethod
    def from_grid(cls, grid: DetectorGrid, offsets=None) -> "NominalModel":
        if offsets is None:
            return cls.from_moments(nominal_mean(grid), nominal_covariance(grid))
        return cls.from_moments(nominal_mean(grid), offset_covariance(grid, offsets))

    @property
    def I(self) -> int:
        return self.u_star.size

    def score(self, u, T: int) -> np.ndarray:
        """v = T (u - u*)^T (Sigma + eps I)^{-1} (u - u*), row-wise for 2-D ``u``."""
        diff = np.atleast_2d(np.asarray(u, dtype=float) - self.u_star)
        w = la.solve_triangular(self.chol, diff.T, lower=True)
        return T * np.einsum("ij,ij->j", w, w)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class ReportRow:
    t: int
    v: float
    psi: float
    alarm: bool
    warm: bool = True


@dataclass
class Trace:
    """Statistics of one detector over a run, warm rows only.

    For NPI, ``v`` and ``psi`` have one column per lag and ``lag_alarm``
    holds the per-lag alarms; ``alarm`` is always the detector-level flag.
    """

    name: str
    kind: str
    t: np.ndarray
    v: np.ndarray
    psi: np.ndarray
    alarm: np.ndarray
    lags: tuple = ()
    lag_alarm: np.ndarray | None = None

    def __len__(self) -> int:
        return self.t.size

    def false_alarm_rate(self, onset: int | None) -> float:
        pre = self.alarm if onset is None else self.alarm[self.t < onset]
        return float(pre.mean()) if pre.size else float("nan")

    def detection_delay(self, onset: int | None):
        if onset is None:
            return None
        hits = np.flatnonzero(self.alarm & (self.t >= onset))
        return int(self.t[hits[0]] - onset) if hits.size else None

    def mean_v(self, lo=None, hi=None) -> np.ndarray | float:
        mask = np.ones(self.t.size, dtype=bool)
        if lo is not None:
            mask &= self.t >= lo
        if hi is not None:
            mask &= self.t < hi
        if not mask.any():
            return float("nan")
        m = self.v[mask].mean(axis=0)
        return float(m) if np.ndim(m) == 0 else m


def _confidence(v, dof: int):
    return statskit.chi_squared_cdf(np.maximum(v, 0.0), dof)


# ---------------------------------------------------------------------------
# sliding window shared by JS and NPI


class SlidingWindow:
    """Running counts of the last T indicator vectors."""

    def __init__(self, size: int, T: int):
        self.T = T
        self.buffer = deque()
        self.counts = np.zeros(size, dtype=np.int64)
        self._pushes = 0

    @property
    def full(self) -> bool:
        return len(self.buffer) == self.T

    def push(self, xi: np.ndarray) -> None:
        xi = np.asarray(xi, dtype=bool)
        self.buffer.append(xi)
        self.counts += xi
        if len(self.buffer) > self.T:
            self.counts -= self.buffer.popleft()
        self._pushes += 1
        if self._pushes % _RECHECK_EVERY == 0:
            fresh = np.sum(np.array(self.buffer), axis=0, dtype=np.int64)
            if not np.array_equal(fresh, self.counts):
                raise RuntimeError("sliding-window counts drifted from buffer contents")

    @property
    def mean(self) -> np.ndarray:
        return self.counts / self.T


def _window_means(xi: np.ndarray, T: int) -> np.ndarray:
    """u for every complete window of T consecutive rows of ``xi`` (exact integer sums)."""
    cs = np.zeros((xi.shape[0] + 1, xi.shape[1]), dtype=np.int64)
    np.cumsum(xi, axis=0, out=cs[1:])
    return (cs[T:] - cs[:-T]) / T


def windowed_scores(points: np.ndarray, blocks: np.ndarray, T: int, nominal: NominalModel) -> np.ndarray:
    """v for every complete window of T consecutive blocks, computed in bounded memory."""
    n = blocks.shape[0] - T + 1
    v = np.empty(max(n, 0))
    for s in range(0, n, _CHUNK):
        e = min(s + _CHUNK, n)
        xi = indicators(points, blocks[s : e + T - 1])
        v[s:e] = nominal.score(_window_means(xi, T), T)
    return v


# ---------------------------------------------------------------------------
# JS


class JsDetector:
    """Joint-statistics detector over contiguous length-L blocks.

    At time t the newest complete block is (z[t-L+1], ..., z[t]) and the window
    holds the T most recent blocks, so the first statistic is available at
    t = T + L - 2 (0-based). Earlier rows are warm-up rows without alarms.
    """

    kind = "js"

    def __init__(self, grid: DetectorGrid, T: int, alpha: float, nominal: NominalModel | None = None, name: str = "js"):
        if T < 1:
            raise ValueError("T must be >= 1")
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        self.grid = grid
        self.T = int(T)
        self.alpha = float(alpha)
        self.nominal = NominalModel.from_grid(grid) if nominal is None else nominal
        self.name = name
        self.reset()

    @property
    def warmup(self) -> int:
        return self.T + self.grid.L - 2

    def reset(self) -> None:
        self.t = 0
        self.samples = deque(maxlen=self.grid.L)
        self.window = SlidingWindow(self.grid.I, self.T)

    def step(self, zcheck) -> ReportRow:
        t = self.t
        self.t += 1
        self.samples.append(np.asarray(zcheck, dtype=float).reshape(self.grid.D))
        if len(self.samples) == self.grid.L:
            self.window.push(indicator(self.grid, np.concatenate(self.samples)))
        if not self.window.full:
            return ReportRow(t, math.nan, math.nan, False, warm=False)
        v = float(self.nominal.score(self.window.mean, self.T)[0])
        psi = float(_confidence(v, self.grid.I))
        return ReportRow(t, v, psi, psi >= self.alpha)

    def run(self, zcheck) -> Trace:
        z = np.asarray(zcheck, dtype=float).reshape(-1, self.grid.D)
        L, T = self.grid.L, self.T
        if z.shape[0] < L + T - 1:
            empty = np.zeros(0)
            return Trace(self.name, self.kind, empty.astype(int), empty, empty, empty.astype(bool))
        blocks = sliding_window_view(z, L, axis=0)           # (N-L+1, D, L)
        blocks = np.swapaxes(blocks, 1, 2).reshape(-1, L * self.grid.D)
        v = windowed_scores(self.grid.points, blocks, T, self.nominal)
        psi = _confidence(v, self.grid.I)
        t = np.arange(v.size) + self.warmup
        return Trace(self.name, self.kind, t, v, psi, psi >= self.alpha)


# ---------------------------------------------------------------------------
# NPI


def pair_offsets(lag: int) -> tuple[int, int]:
    """Slot 0 holds z[t], slot 1 holds z[t - lag]."""
    return (0, -int(lag))


class NpiDetector:
    """Normality plus pairwise-independence detector: one JS-type statistic per lag 1..L-1."""

    kind = "npi"

    def __init__(self, grid: DetectorGrid, L: int, T: int, alpha: float, name: str = "npi"):
        if grid.L != 2:
            raise ValueError("NPI needs a grid on pairs (L = 2)")
        if L < 2:
            raise ValueError("NPI needs L >= 2")
        self.grid = grid
        self.L = int(L)
        self.T = int(T)
        self.alpha = float(alpha)
        self.name = name
        self.lags = tuple(range(1, self.L))
        self.nominal = {l: NominalModel.from_grid(grid, pair_offsets(l)) for l in self.lags}
        self.reset()

    @property
    def warmup(self) -> int:
        return self.T + self.L - 2

    def reset(self) -> None:
        self.t = 0
        self.samples = deque(maxlen=self.L)
        self.windows = {l: SlidingWindow(self.grid.I, self.T) for l in self.lags}

    def step(self, zcheck) -> list[ReportRow]:
        t = self.t
        self.t += 1
        self.samples.append(np.asarray(zcheck, dtype=float).reshape(self.grid.D))
        rows = []
        for l in self.lags:
            if len(self.samples) > l:
                pair = np.concatenate([self.samples[-1], self.samples[-1 - l]])
                self.windows[l].push(indicator(self.grid, pair))
            if t < self.warmup:
                rows.append(ReportRow(t, math.nan, math.nan, False, warm=False))
                continue
            v = float(self.nominal[l].score(self.windows[l].mean, self.T)[0])
            psi = float(_confidence(v, self.grid.I))
            rows.append(ReportRow(t, v, psi, psi >= self.alpha))
        return rows

    def run(self, zcheck) -> Trace:
        z = np.asarray(zcheck, dtype=float).reshape(-1, self.grid.D)
        n = z.shape[0]
        t = np.arange(self.warmup, n)
        v = np.empty((t.size, len(self.lags)))
        for k, l in enumerate(self.lags):
            pairs = np.concatenate([z[l:], z[:-l]], axis=1)     # row s: (z[s+l], z[s])
            # window ending at pair row s covers time s + l; keep rows from the common start
            first = self.warmup - (self.T - 1 + l)
            v[:, k] = windowed_scores(self.grid.points, pairs[first:], self.T, self.nominal[l])
        psi = _confidence(v, self.grid.I)
        lag_alarm = psi >= self.alpha
        return Trace(self.name, self.kind, t, v, psi, lag_alarm.any(axis=1), self.lags, lag_alarm)


# ---------------------------------------------------------------------------
# SO


class SoDetector:
    """Per-sample chi-squared test on raw innovations.

    ``literal=True`` scores z~^T Gamma z~ instead of z~^T Gamma^{-1} z~; the
    literal form is not chi-squared distributed and exists for comparison only.
    """

    kind = "so"

    def __init__(self, Gamma, alpha: float, literal: bool = False, name: str = "so"):
        Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
        self.D = Gamma.shape[0]
        self.alpha = float(alpha)
        self.literal = literal
        self.name = name
        self.weight = Gamma if literal else np.linalg.inv(Gamma)
        self.weight = 0.5 * (self.weight + self.weight.T)
        self.t = 0

    warmup = 0

    def step(self, innov) -> ReportRow:
        e = np.asarray(innov, dtype=float).reshape(self.D)
        v = float(e @ self.weight @ e)
        psi = float(_confidence(v, self.D))
        row = ReportRow(self.t, v, psi, psi >= self.alpha)
        self.t += 1
        return row

    def run(self, innov) -> Trace:
        e = np.asarray(innov, dtype=float).reshape(-1, self.D)
        v = np.einsum("ti,ij,tj->t", e, self.weight, e)
        psi = _confidence(v, self.D)
        return Trace(self.name, self.kind, np.arange(e.shape[0]), v, psi, psi >= self.alpha)
