"""Test-point grids for the detectors: generalized Lloyd on N(0, I_{LD}).

The codebook is fitted to a fixed Monte Carlo sample of the standard normal
(i.e. k-means), seeded k-means++ style. Empty cells are re-seeded at the
sample point currently worst served by its centroid.
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

ALGORITHM_VERSION = "lloyd-kmeans-1"
MAX_ITERS = 200
REL_TOL = 1e-6


def default_sample_count(n_points: int) -> int:
    return max(100_000, 1000 * n_points)


@dataclass(frozen=True)
class DetectorGrid:
    """I test points in R^{L*D}; ``points[i].reshape(L, D)[l]`` is the sub-vector for block slot l."""

    L: int
    D: int
    points: np.ndarray
    distortion: float = float("nan")
    iterations: int = 0
    converged: bool = True
    history: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, ndmin=2)
        if pts.shape[1] != self.L * self.D:
            raise ValueError(f"grid points must have L*D = {self.L * self.D} columns, got {pts.shape[1]}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("grid points must be pairwise distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def I(self) -> int:
        return self.points.shape[0]

    @property
    def blocks(self) -> np.ndarray:
        """Points as an (I, L, D) array."""
        return self.points.reshape(self.I, self.L, self.D)


def _assign(tree_pts: np.ndarray, samples: np.ndarray):
    dist, idx = cKDTree(tree_pts).query(samples)
    return dist, idx


def _kmeanspp(samples: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = samples.shape[0]
    centers = np.empty((k, samples.shape[1]))
    centers[0] = samples[rng.integers(n)]
    d2 = np.sum((samples - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j:] = samples[rng.choice(n, size=k - j, replace=False)]
            break
        pick = rng.choice(n, p=d2 / total)
        centers[j] = samples[pick]
        d2 = np.minimum(d2, np.sum((samples - centers[j]) ** 2, axis=1))
    return centers


def lloyd_grid(
    L: int,
    D: int,
    I: int,
    sample_count: int | None = None,
    seed=0,
    max_iters: int = MAX_ITERS,
    rel_tol: float = REL_TOL,
) -> DetectorGrid:
    """Fit ``I`` centroids to a sample of N(0, I_{LD}) with Lloyd iterations.

    Stops when the relative distortion improvement drops below ``rel_tol`` or
    after ``max_iters`` iterations. Hitting the iteration cap returns the best
    codebook seen with ``converged=False`` and a warning.
    """
    if min(L, D, I) < 1:
        raise ValueError("L, D and I must be positive")
    dim = L * D
    n = default_sample_count(I) if sample_count is None else int(sample_count)
    if n <= I:
        raise ValueError(f"sample_count ({n}) must exceed the number of points ({I})")
    rng = np.random.default_rng(seed)
    samples = rng.standard_normal((n, dim))
    centers = _kmeanspp(samples, I, rng)

    history = []
    best = None
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        dist, idx = _assign(centers, samples)
        distortion = float(np.mean(dist**2))
        history.append(distortion)
        if best is None or distortion <= best[0]:
            best = (distortion, centers.copy())
        if len(history) > 1:
            prev = history[-2]
            if prev - distortion <= rel_tol * prev:
                converged = True
                break
        counts = np.bincount(idx, minlength=I)
        sums = np.zeros_like(centers)
        np.add.at(sums, idx, samples)
        new = centers.copy()
        full = counts > 0
        new[full] = sums[full] / counts[full, None]
        empty = np.flatnonzero(~full)
        if empty.size:
            # worst-served samples, farthest first
            order = np.argsort(-dist, kind="stable")
            new[empty] = samples[order[: empty.size]]
            log.debug("re-seeded %d empty cells at iteration %d", empty.size, it)
        centers = new

    if not converged:
        warnings.warn(f"Lloyd did not converge in {max_iters} iterations; returning best iterate", RuntimeWarning)
    distortion, centers = best
    return DetectorGrid(
        L=L,
        D=D,
        points=centers,
        distortion=distortion,
        iterations=it,
        converged=converged,
        history=tuple(history),
    )


# ---------------------------------------------------------------------------
# disk cache


def cache_key(L: int, D: int, I: int, sample_count: int, seed, max_iters: int = MAX_ITERS, rel_tol: float = REL_TOL) -> dict:
    return {
        "L": int(L),
        "D": int(D),
        "I": int(I),
        "sample_count": int(sample_count),
        "seed": int(seed),
        "max_iters": int(max_iters),
        "rel_tol": float(rel_tol),
        "algorithm": ALGORITHM_VERSION,
    }


def cache_filename(key: dict) -> str:
    digest = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]
    return f"grid_L{key['L']}_D{key['D']}_I{key['I']}_{digest}.txt"


def save_grid(path, grid: DetectorGrid, key: dict) -> None:
    """Write the grid as a text table: '#'-prefixed JSON header lines, then one row per point."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"distortion": grid.distortion, "iterations": grid.iterations, "converged": grid.converged}
    lines = [
        "# jsdetect grid cache",
        "# key: " + json.dumps(key, sort_keys=True),
        "# meta: " + json.dumps(meta, sort_keys=True),
    ]
    lines += [" ".join(repr(float(v)) for v in row) for row in grid.points]
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def load_grid(path, key: dict | None = None) -> DetectorGrid:
    path = Path(path)
    header = {}
    rows = []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            name, sep, payload = line[1:].strip().partition(": ")
            if sep and name in ("key", "meta"):
                header[name] = json.loads(payload)
        elif line.strip():
            rows.append([float(v) for v in line.split()])
    stored = header.get("key")
    if stored is None:
        raise ValueError(f"{path}: missing key header")
    if key is not None and stored != key:
        raise ValueError(f"{path}: cache key mismatch (stored {stored}, wanted {key})")
    meta = header.get("meta", {})
    return DetectorGrid(
        L=stored["L"],
        D=stored["D"],
        points=np.array(rows),
        distortion=meta.get("distortion", float("nan")),
        iterations=meta.get("iterations", 0),
        converged=meta.get("converged", True),
    )


def cached_lloyd_grid(cache_dir, L, D, I, sample_count=None, seed=0, max_iters=MAX_ITERS, rel_tol=REL_TOL):
    """Return ``(grid, path, hit)``; builds and stores the grid on a miss."""
    n = default_sample_count(I) if sample_count is None else int(sample_count)
    key = cache_key(L, D, I, n, seed, max_iters, rel_tol)
    path = Path(cache_dir) / cache_filename(key)
    if path.exists():
        return load_grid(path, key), path, True
    grid = lloyd_grid(L, D, I, n, seed, max_iters, rel_tol)
    save_grid(path, grid, key)
    return grid, path, False
