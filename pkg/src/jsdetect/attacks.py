"""Sensor attacks on the measurement stream.

The two stealthy attacks work in the normalized-innovation domain. The
attacker runs its own copy of the receiver's steady-state filter on the true
output y, transforms the normalized innovation y̌ with an attack kernel, and
then emits the measurement z that makes the receiver see exactly the
attacked sequence ž (see :meth:`WhitenedStream.reconstruct_step`).

* ``uncorrelated``: r[t] = υ r[t-τ] + sqrt(1-υ²) y̌[t], ž[t] = γ[t] r[t].
  The samples stay uncorrelated but are dependent at lag τ.
* ``pairwise`` (D = 1): even steps pass y̌ through, odd steps emit
  sign(ž[t-1] ž[t-2]) |y̌[t]|. Every pair is independent N(0, 1), but each
  odd-step triple has a nonnegative product.

``bias`` and ``replay`` act directly on y. They are crude baselines that
every detector should catch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from jsdetect import linsys
from jsdetect.linsys import SteadyState, SystemModel

KINDS = ("none", "uncorrelated", "pairwise", "bias", "replay")


@dataclass(frozen=True)
class AttackScenario:
    """Declarative attack description.

    ``gamma`` selects the switching variable of the uncorrelated attack:
    ``"sign"`` draws it from {-1, +1}, ``"binary"`` from {0, 1}.
    """

    kind: str = "none"
    onset: int = 0
    tau: int = 1
    upsilon: float = 2**-0.5
    gamma: str = "sign"
    offset: tuple = ()
    window: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        if self.onset < 0:
            raise ValueError("onset must be >= 0")
        if self.kind == "uncorrelated":
            if not 0.0 < self.upsilon < 1.0:
                raise ValueError("upsilon must lie in (0, 1)")
            if int(self.tau) != self.tau or self.tau < 1:
                raise ValueError("tau must be a positive integer")
            if self.gamma not in ("sign", "binary"):
                raise ValueError("gamma must be 'sign' or 'binary'")
        if self.kind == "replay" and self.window < 1:
            raise ValueError("replay needs a capture window >= 1")


class UncorrelatedKernel:
    """Lag-τ dependent but uncorrelated kernel.

    r[0], r[-1], ..., r[-τ+1] are i.i.d. N(0, I); the first call emits step 1.
    ``step`` and ``run`` consume the generator identically, so they can be mixed.
    """

    def __init__(self, D: int, tau: int, upsilon: float, rng: np.random.Generator, gamma: str = "sign"):
        self.D = D
        self.tau = int(tau)
        self.upsilon = float(upsilon)
        self.gain = float(np.sqrt(1.0 - upsilon**2))
        self.rng = rng
        self.low = -1.0 if gamma == "sign" else 0.0
        # r[k-τ+1], ..., r[k], oldest first
        self.r = rng.standard_normal((self.tau, D))

    def step(self, ycheck) -> np.ndarray:
        ycheck = np.asarray(ycheck, dtype=float).reshape(self.D)
        r = self.upsilon * self.r[0] + self.gain * ycheck
        self.r = np.vstack([self.r[1:], r])
        g = 1.0 if self.rng.random() < 0.5 else self.low
        return g * r

    def run(self, ycheck) -> np.ndarray:
        y = np.asarray(ycheck, dtype=float).reshape(-1, self.D)
        n = y.shape[0]
        r = np.empty_like(y)
        for j in range(min(self.tau, n)):
            # every τ-th step forms a first-order recursion seeded by the buffer
            for d in range(self.D):
                r[j :: self.tau, d] = lfilter(
                    [self.gain], [1.0, -self.upsilon], y[j :: self.tau, d], zi=[self.upsilon * self.r[j, d]]
                )[0]
        self.r = np.vstack([self.r, r])[-self.tau :]
        g = np.where(self.rng.random(n) < 0.5, 1.0, self.low)
        return g[:, None] * r


class PairwiseKernel:
    """Pairwise-independent, jointly dependent kernel (scalar measurements).

    ž[0], ž[-1] are drawn i.i.d. N(0, 1); the first call emits step 1 (odd).
    """

    def __init__(self, rng: np.random.Generator, D: int = 1):
        if D != 1:
            raise ValueError("the pairwise attack is defined for scalar measurements (D = 1)")
        self.k = 0
        self.prev1, self.prev2 = rng.standard_normal(2)   # ž[k], ž[k-1]

    def step(self, ycheck) -> np.ndarray:
        y = float(np.asarray(ycheck, dtype=float).reshape(1)[0])
        self.k += 1
        if self.k % 2 == 0:
            z = y
        else:
            z = abs(y) * _sign(self.prev1 * self.prev2)
        self.prev1, self.prev2 = z, self.prev1
        return np.array([z])

    def run(self, ycheck) -> np.ndarray:
        y = np.asarray(ycheck, dtype=float).reshape(-1)
        return np.array([self.step(v)[0] for v in y]).reshape(-1, 1)


def _sign(x: float) -> float:
    return 1.0 if x > 0 else (-1.0 if x < 0 else 0.0)


class BiasKernel:
    def __init__(self, offset, D: int):
        self.offset = np.broadcast_to(np.asarray(offset if len(offset) else 0.0, dtype=float), (D,)).copy()

    def step(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) + self.offset


class ReplayKernel:
    """Records ``window`` samples, then plays them back in a loop."""

    def __init__(self, window: int):
        self.window = int(window)
        self.record = []
        self.k = 0

    def capture(self, y) -> None:
        self.record.append(np.array(y, dtype=float))
        if len(self.record) > self.window:
            self.record.pop(0)

    def step(self, y=None) -> np.ndarray:
        if len(self.record) < self.window:
            raise ValueError(f"replay requested after {len(self.record)} of {self.window} captured samples")
        out = self.record[self.k % self.window]
        self.k += 1
        return out.copy()


def _check_length(y, model):
    y = np.asarray(y, dtype=float)
    return y.reshape(len(y), model.meas_dim)


def apply_scenario(model: SystemModel, steady: SteadyState, scenario: AttackScenario, y) -> np.ndarray:
    """Attacked measurements z for nominal outputs y.

    z[t] = y[t] before the onset. The result is causal: z[t] depends on
    y[0..t] only.
    """
    y = _check_length(y, model)
    z = y.copy()
    kind = scenario.kind
    onset = scenario.onset
    if kind == "none" or onset >= len(y):
        return z
    rng = np.random.default_rng(scenario.seed)

    if kind == "bias":
        kernel = BiasKernel(scenario.offset, model.meas_dim)
        for t in range(onset, len(y)):
            z[t] = kernel.step(y[t])
        return z

    if kind == "replay":
        kernel = ReplayKernel(scenario.window)
        for t in range(max(0, onset - scenario.window), onset):
            kernel.capture(y[t])
        for t in range(onset, len(y)):
            z[t] = kernel.step()
        return z

    if kind == "uncorrelated":
        kernel = UncorrelatedKernel(model.meas_dim, scenario.tau, scenario.upsilon, rng, scenario.gamma)
    else:
        kernel = PairwiseKernel(rng, model.meas_dim)

    # the attacker's filter on y and the receiver's filter coincide until the onset,
    # so one reconstruction pass over the spliced sequence reproduces the receiver
    zcheck = linsys.whiten(model, steady, y)
    zcheck[onset:] = kernel.run(zcheck[onset:])
    z = linsys.reconstruct(model, steady, zcheck)
    z[:onset] = y[:onset]
    return z


def attacked_whitened(model, steady, scenario, y):
    """Convenience: the normalized innovations the receiver sees under ``scenario``."""
    return linsys.whiten(model, steady, apply_scenario(model, steady, scenario, y))
