from __future__ import annotations

import numpy as np
import pytest

from jsdetect import linsys
from jsdetect.quantizer import DetectorGrid, lloyd_grid


@pytest.fixture(scope="session")
def model():
    return linsys.SystemModel.scalar(0.98, 1.0, 0.1, 0.1)


@pytest.fixture(scope="session")
def steady(model):
    return linsys.SteadyState.from_model(model)


@pytest.fixture(scope="session")
def small_grid():
    return lloyd_grid(3, 1, 6, sample_count=20_000, seed=5)


def random_grid(rng, L, I, D=1):
    """Grid with points drawn from N(0, 1); handy for closed-form checks."""
    pts = rng.standard_normal((I, L * D))
    return DetectorGrid(L=L, D=D, points=pts, distortion=float("nan"), iterations=0, converged=True, history=())
