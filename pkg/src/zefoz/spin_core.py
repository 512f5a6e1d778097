"""Angular-momentum operators, tensor rotations and unit conventions.

Energies are in MHz and fields in tesla throughout the package, so field
gradients come out in MHz/T and curvatures in MHz/T^2.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

MU_B_OVER_H = 13996.2449  # MHz/T, CODATA
MU_N_OVER_H = 7.6225932  # MHz/T, CODATA


@dataclass(frozen=True)
class HalfInteger:
    """Spin quantum number stored as twice its value (j = twice / 2)."""

    twice: int

    def __post_init__(self):
        if int(self.twice) != self.twice or self.twice < 1:
            raise ValueError(f"2j must be a positive integer, got {self.twice!r}")

    @classmethod
    def parse(cls, value) -> "HalfInteger":
        """Accept 0.5, 1.5, "3/2", "1" or an existing HalfInteger."""
        if isinstance(value, HalfInteger):
            return value
        frac = Fraction(str(value)) if isinstance(value, str) else Fraction(value).limit_denominator(2)
        twice = 2 * frac
        if twice.denominator != 1:
            raise ValueError(f"{value!r} is not a multiple of 1/2")
        return cls(int(twice))

    @property
    def value(self) -> float:
        return self.twice / 2

    @property
    def dim(self) -> int:
        return self.twice + 1

    @property
    def is_integer(self) -> bool:
        return self.twice % 2 == 0

    def __str__(self):
        return str(self.twice // 2) if self.is_integer else f"{self.twice}/2"


@dataclass(frozen=True)
class EulerAngles:
    """Intrinsic Z-Y-Z Euler angles in radians."""

    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    @classmethod
    def from_degrees(cls, alpha=0.0, beta=0.0, gamma=0.0) -> "EulerAngles":
        return cls(*np.radians([alpha, beta, gamma]))


@dataclass(frozen=True)
class TensorSpec:
    """Symmetric rank-2 tensor: principal values plus principal-to-lab orientation."""

    principal_values: tuple[float, float, float]
    orientation: EulerAngles = field(default_factory=EulerAngles)

    def __post_init__(self):
        vals = tuple(float(v) for v in self.principal_values)
        if len(vals) != 3 or not all(np.isfinite(vals)):
            raise ValueError(f"need three finite principal values, got {self.principal_values!r}")
        object.__setattr__(self, "principal_values", vals)

    @classmethod
    def isotropic(cls, value: float) -> "TensorSpec":
        return cls((value, value, value))

    def lab(self) -> np.ndarray:
        return tensor_to_lab(self)


@dataclass(frozen=True)
class Constants:
    mu_B_over_h: float = MU_B_OVER_H
    mu_n_over_h: float = MU_N_OVER_H

    def __post_init__(self):
        if not (self.mu_B_over_h > 0 and self.mu_n_over_h > 0):
            raise ValueError("magneton values must be positive")


def angular_momentum_operators(j: HalfInteger) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Jx, Jy, Jz in the |j, m> basis with m descending."""
    j = HalfInteger.parse(j)
    jv = j.value
    m = jv - np.arange(j.dim)
    # <m+1|J+|m> on the superdiagonal (row m+1 precedes row m)
    jplus = np.diag(np.sqrt(jv * (jv + 1) - m[1:] * (m[1:] + 1)), k=1).astype(complex)
    jminus = jplus.conj().T
    jx = (jplus + jminus) / 2
    jy = (jplus - jminus) / 2j
    jz = np.diag(m).astype(complex)
    return jx, jy, jz


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(b):
    c, s = np.cos(b), np.sin(b)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_from_euler(e: EulerAngles) -> np.ndarray:
    """Proper rotation R = Rz(alpha) Ry(beta) Rz(gamma)."""
    return _rz(e.alpha) @ _ry(e.beta) @ _rz(e.gamma)


def tensor_to_lab(t: TensorSpec) -> np.ndarray:
    r = rotation_from_euler(t.orientation)
    m = r @ np.diag(t.principal_values) @ r.T
    return (m + m.T) / 2


def spin_rotation(j: HalfInteger, e: EulerAngles) -> np.ndarray:
    """Unitary U with U J_a U^dagger = sum_p R[p, a] J_p for R = rotation_from_euler(e)."""
    from scipy.linalg import expm

    jx, jy, jz = angular_momentum_operators(j)
    return expm(-1j * e.alpha * jz) @ expm(-1j * e.beta * jy) @ expm(-1j * e.gamma * jz)


@dataclass(frozen=True)
class ProductOperators:
    """Electron and nuclear spin operators embedded in the product space."""

    S: tuple[np.ndarray, np.ndarray, np.ndarray]
    I: tuple[np.ndarray, np.ndarray, np.ndarray]
    dim_s: int
    dim_i: int

    @property
    def dim(self) -> int:
        return self.dim_s * self.dim_i


def embed_operators(s: HalfInteger, i: HalfInteger) -> ProductOperators:
    """S_p (x) 1 and 1 (x) I_p, electron factor outer."""
    s, i = HalfInteger.parse(s), HalfInteger.parse(i)
    one_s, one_i = np.eye(s.dim), np.eye(i.dim)
    sops = tuple(np.kron(op, one_i) for op in angular_momentum_operators(s))
    iops = tuple(np.kron(one_s, op) for op in angular_momentum_operators(i))
    return ProductOperators(sops, iops, s.dim, i.dim)


def direction_unit_vector(theta: float, phi: float) -> np.ndarray:
    """Unit vector in the (D1, D2, b) frame; theta is the elevation above the D1-D2 plane."""
    ct = np.cos(theta)
    return np.array([ct * np.cos(phi), ct * np.sin(phi), np.sin(theta)])


def spherical_field(magnitude: float, theta_deg: float, phi_deg: float) -> np.ndarray:
    return magnitude * direction_unit_vector(np.radians(theta_deg), np.radians(phi_deg))


def field_angles(b: np.ndarray) -> tuple[float, float, float]:
    """Inverse of spherical_field: (magnitude, theta_deg, phi_deg)."""
    b = np.asarray(b, dtype=float)
    mag = float(np.linalg.norm(b))
    if mag == 0.0:
        return 0.0, 0.0, 0.0
    theta = np.degrees(np.arcsin(np.clip(b[2] / mag, -1.0, 1.0)))
    phi = np.degrees(np.arctan2(b[1], b[0]))
    return mag, float(theta), float(phi)


def as_field(b) -> np.ndarray:
    b = np.asarray(b, dtype=float).reshape(3)
    if not np.all(np.isfinite(b)):
        raise ValueError(f"field components must be finite, got {b}")
    return b
