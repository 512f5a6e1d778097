"""Coherence-time model (pi T2)^-1 = |S1.dB| + |dB.S2.dB| and related checks.

Sensitivities are in MHz/T and MHz/T^2; rates come out in Hz.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .echo import EchoDataset
from .hamiltonian import SpinSystem, TransitionId, solve_batch
from .sensitivity import TransitionSensitivity

MHZ = 1e6
DEFAULT_SAMPLES = 10_000
DEFAULT_SEED = 20180730
NOISE_MODES = ("worst-case", "isotropic-average", "fixed-direction")


@dataclass(frozen=True)
class NoiseVector:
    magnitude: float  # T
    mode: str = "worst-case"
    direction: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not self.magnitude >= 0:
            raise ValueError("noise magnitude must be nonnegative")
        if self.mode not in NOISE_MODES:
            raise ValueError(f"noise mode must be one of {NOISE_MODES}, got {self.mode!r}")
        if self.mode == "fixed-direction":
            if self.direction is None:
                raise ValueError("fixed-direction noise needs a direction")
            n = np.asarray(self.direction, dtype=float)
            norm = np.linalg.norm(n)
            if norm == 0:
                raise ValueError("noise direction must be nonzero")
            object.__setattr__(self, "direction", tuple(float(v) for v in n / norm))


@dataclass(frozen=True)
class T2Prediction:
    """Predicted T2 in seconds; ``t2`` is None when the total rate vanishes."""

    t2: float | None
    rate_linear: float
    rate_quadratic: float
    noise: NoiseVector
    inputs: TransitionSensitivity

    @property
    def infinite(self) -> bool:
        return self.t2 is None

    @property
    def rate(self) -> float:
        return self.rate_linear + self.rate_quadratic


def noise_rates(s1: np.ndarray, s2: np.ndarray, noise: NoiseVector) -> tuple[float, float]:
    """Linear and quadratic dephasing rates (Hz) for one noise model."""
    db = noise.magnitude
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    if noise.mode == "worst-case":
        lin = np.linalg.norm(s1) * db
        quad = db**2 * np.max(np.abs(np.linalg.eigvalsh(s2)))
    elif noise.mode == "isotropic-average":
        # mean of |cos| over the sphere is 1/2
        lin = 0.5 * np.linalg.norm(s1) * db
        quad = db**2 * abs(np.trace(s2)) / 3
    else:
        n = np.asarray(noise.direction)
        lin = abs(s1 @ n) * db
        quad = db**2 * abs(n @ s2 @ n)
    return float(lin * MHZ), float(quad * MHZ)


def predict_t2(ts: TransitionSensitivity, noise: NoiseVector) -> T2Prediction:
    lin, quad = noise_rates(ts.S1, ts.S2, noise)
    total = lin + quad
    t2 = None if total == 0 else 1.0 / (math.pi * total)
    return T2Prediction(t2, lin, quad, noise, ts)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator so sample streams do not depend on evaluation order."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class InhomogeneityResult:
    sigma_hz: float
    t2_star: float | None  # s; None means infinite
    samples: int
    discarded: int
    spread: float
    seed: int


def inhomogeneity_dephasing(
    sys: SpinSystem,
    B0,
    fractional_spread: float,
    t: TransitionId,
    samples: int = DEFAULT_SAMPLES,
    seed: int = DEFAULT_SEED,
) -> InhomogeneityResult:
    """Spread of the transition frequency when each field component is off by a Gaussian fraction.

    Samples B = B0 * (1 + eps) with eps ~ N(0, spread) drawn independently per
    component, and returns the standard deviation of nu and T2* = 1 / (pi sigma).
    Samples where either level becomes degenerate are dropped and counted.
    """
    if fractional_spread < 0:
        raise ValueError("fractional spread must be nonnegative")
    if samples < 10:
        raise ValueError("need at least 10 samples")
    b0 = np.asarray(B0, dtype=float)
    if fractional_spread == 0:
        return InhomogeneityResult(0.0, None, samples, 0, 0.0, seed)
    eps = make_rng(seed).normal(0.0, fractional_spread, size=(samples, 3))
    energies, _ = solve_batch(sys, b0[None, :] * (1.0 + eps))
    nu = energies[:, t.upper] - energies[:, t.lower]
    gaps = np.diff(energies, axis=1)
    bad = np.zeros(samples, dtype=bool)
    for k in (t.lower, t.upper):
        if k > 0:
            bad |= gaps[:, k - 1] <= 1e-6
        if k < energies.shape[1] - 1:
            bad |= gaps[:, k] <= 1e-6
    nu = nu[~bad]
    sigma = float(np.std(nu, ddof=1)) * MHZ if len(nu) > 1 else 0.0
    t2s = None if sigma == 0 else 1.0 / (math.pi * sigma)
    return InhomogeneityResult(sigma, t2s, samples, int(bad.sum()), float(fractional_spread), seed)


def combine_t2(*times: float | None) -> float | None:
    """Add dephasing rates: 1/T = sum 1/T_i, ignoring infinite (None) contributions."""
    rate = sum(1.0 / t for t in times if t is not None)
    return None if rate == 0 else 1.0 / rate


def synthesize_echo(
    t2: float,
    i0: float,
    tau_grid,
    relative_noise: float = 0.0,
    seed: int = DEFAULT_SEED,
    with_errors: bool = False,
) -> EchoDataset:
    """Echo areas i0 exp(-4 tau / t2) (1 + eta), eta ~ N(0, relative_noise)."""
    if not t2 > 0:
        raise ValueError("t2 must be positive")
    tau = np.asarray(tau_grid, dtype=float)
    clean = i0 * np.exp(-4.0 * tau / t2)
    eta = make_rng(seed).normal(0.0, relative_noise, size=tau.shape) if relative_noise > 0 else 0.0
    area = clean * (1.0 + eta)
    err = np.abs(area) * relative_noise if with_errors and relative_noise > 0 else None
    return EchoDataset(tau, area, err)


@dataclass(frozen=True)
class T1Check:
    passed: bool
    margin: float  # 2 T1 - T2, seconds


def t1_ceiling(t2: float, t1: float) -> T1Check:
    """T2 may not exceed 2 T1; the boundary counts as a pass."""
    if not t1 > 0:
        raise ValueError("t1 must be positive")
    return T1Check(t2 <= 2 * t1, 2 * t1 - t2)
