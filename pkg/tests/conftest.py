import os
from pathlib import Path

import numpy as np
import pytest

from erspin.spin import AffineModel, SpinParams, load_params

DATA = Path(__file__).resolve().parents[1] / "data"

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)


def random_params(rng, nuclear_spin=3.5):
    """Strongly anisotropic parameters at the scale of an Er-like ground doublet."""
    q = rng.normal(0, 10, (3, 3))
    q = q + q.T
    q -= np.trace(q) / 3 * np.eye(3)
    return SpinParams(
        g=rng.normal(0, 3, (3, 3)),
        A=rng.normal(0, 400, (3, 3)),
        Q=q,
        nuclear_g=rng.normal(0, 0.3),
        nuclear_spin=nuclear_spin,
    )


def random_field(rng, scale=0.02):
    return rng.normal(0, scale, 3)


def electron_toy(nuclear_spin=3.5, nuclear_g=0.0):
    return SpinParams(g=2 * np.eye(3), nuclear_g=nuclear_g, nuclear_spin=nuclear_spin)


def avoided_crossing(delta=1.0, slope=1000.0, axis=2):
    """H = delta sx + slope B_axis sz: gap 2 delta at B = 0, diabatic slopes +-slope."""
    dh = np.zeros((3, 2, 2), dtype=complex)
    dh[axis] = slope * SZ
    return AffineModel(delta * SX, dh, label="avoided-crossing")


@pytest.fixture(scope="session")
def ground_params():
    return load_params(DATA / "illustrative_ground.txt")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_report_header(config):
    return f"ERSPIN_DISABLE_NUMBA={os.environ.get('ERSPIN_DISABLE_NUMBA', '0')}"
