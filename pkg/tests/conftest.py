from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings, strategies as st

from zefoz.hamiltonian import SpinSystem, labeled_transition
from zefoz.spin_core import EulerAngles, TensorSpec

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]
EXAMPLE_CONFIG = ROOT / "configs" / "yb171_yso_siteII.json"


def yb_ground(g_n=0.987) -> SpinSystem:
    return SpinSystem(A=TensorSpec((1183.0, -127.0, 5000.0)), g=TensorSpec((0.13, 1.50, 6.06)), g_n=g_n, label="ground")


def yb_excited(g_n=0.987) -> SpinSystem:
    return SpinSystem(
        A=TensorSpec((-4800.0, 3370.0, 1200.0)),
        g=TensorSpec((1.45, 0.32, 2.52), EulerAngles.from_degrees(4.0, 3.0, 0.0)),
        g_n=g_n,
        label="excited",
    )


@pytest.fixture(scope="session")
def ground():
    return yb_ground()


@pytest.fixture(scope="session")
def psi(ground):
    return labeled_transition(ground, "psi-", "psi+")


@pytest.fixture(scope="session")
def phi(ground):
    return labeled_transition(ground, "phi-", "phi+")


def random_anisotropic(rng, scale=3000.0, min_gap=50.0):
    """Three principal values with pairwise gaps and magnitudes above ``min_gap``."""
    while True:
        v = rng.uniform(-scale, scale, 3)
        if min(abs(v)) > min_gap and min(abs(v[0] - v[1]), abs(v[1] - v[2]), abs(v[0] - v[2])) > min_gap:
            return tuple(float(x) for x in v)


def random_euler(rng) -> EulerAngles:
    return EulerAngles(*rng.uniform(0, 2 * np.pi, 3))


def random_system(rng, I=0.5, with_q=False) -> SpinSystem:
    g = rng.uniform(0.1, 6.0, 3)
    q = None
    if with_q:
        q = TensorSpec(tuple(rng.uniform(-50, 50, 3)), random_euler(rng))
    return SpinSystem(
        A=TensorSpec(random_anisotropic(rng), random_euler(rng)),
        g=TensorSpec(tuple(g), random_euler(rng)),
        I=I,
        g_n=float(rng.uniform(-1, 1)),
        Q=q,
    )


angles = st.floats(-2 * np.pi, 2 * np.pi, allow_nan=False)
euler = st.builds(EulerAngles, angles, angles, angles)
principal = st.tuples(*[st.floats(-5000, 5000, allow_nan=False)] * 3)
seeds = st.integers(0, 2**32 - 1)
