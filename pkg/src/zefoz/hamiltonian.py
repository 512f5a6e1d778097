"""Electron-nuclear spin Hamiltonian, zero-field closed forms and level bookkeeping.

H = S.A.I + mu_B B.g.S - mu_n B.g_n.I (+ I.Q.I), all terms in MHz.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .eigen import DEGENERACY_TOL, EigenSolution, eigensolve, eigensolve_batch
from .spin_core import (
    Constants,
    EulerAngles,
    HalfInteger,
    ProductOperators,
    TensorSpec,
    as_field,
    embed_operators,
    spin_rotation,
)

HALF = HalfInteger(1)
ZERO_FIELD_LABELS = ("psi+", "psi-", "phi+", "phi-")


class DegenerateLevelsError(ValueError):
    """Raised when a quantity needs nondegenerate levels but a cluster is found."""


@dataclass(frozen=True)
class SpinSystem:
    """One electronic level: spin quantum numbers and interaction tensors."""

    A: TensorSpec
    g: TensorSpec
    S: HalfInteger = HALF
    I: HalfInteger = HALF
    g_n: float = 0.0
    g_n_tensor: TensorSpec | None = None
    Q: TensorSpec | None = None
    label: str = ""
    constants: Constants = field(default_factory=Constants)

    def __post_init__(self):
        object.__setattr__(self, "S", HalfInteger.parse(self.S))
        object.__setattr__(self, "I", HalfInteger.parse(self.I))
        if self.Q is not None and self.I.twice == 1:
            warnings.warn(
                f"{self.label or 'system'}: a quadrupole term with I = 1/2 only shifts all levels",
                stacklevel=3,
            )

    @cached_property
    def ops(self) -> ProductOperators:
        return embed_operators(self.S, self.I)

    @property
    def dim(self) -> int:
        return self.S.dim * self.I.dim

    @cached_property
    def zero_field_matrix(self) -> np.ndarray:
        a = self.A.lab()
        S, I = self.ops.S, self.ops.I
        h = sum(a[p, q] * (S[p] @ I[q]) for p in range(3) for q in range(3))
        if self.Q is not None:
            qm = self.Q.lab()
            h = h + sum(qm[p, q] * (I[p] @ I[q]) for p in range(3) for q in range(3))
        return np.asarray(h, dtype=complex)

    @cached_property
    def zeeman_generators(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """dH/dB_p for p in (D1, D2, b), in MHz/T."""
        c = self.constants
        g = self.g.lab()
        gn = self.g_n_tensor.lab() if self.g_n_tensor is not None else self.g_n * np.eye(3)
        S, I = self.ops.S, self.ops.I
        return tuple(
            c.mu_B_over_h * sum(g[p, q] * S[q] for q in range(3))
            - c.mu_n_over_h * sum(gn[p, q] * I[q] for q in range(3))
            for p in range(3)
        )

    def with_tensors(self, **changes) -> "SpinSystem":
        return replace(self, **changes)


@dataclass(frozen=True)
class TransitionId:
    lower: int
    upper: int

    def __post_init__(self):
        if self.lower == self.upper:
            raise ValueError("a transition needs two different levels")

    def __str__(self):
        return f"{self.lower}-{self.upper}"


def build_hamiltonian(sys: SpinSystem, B) -> np.ndarray:
    b = as_field(B)
    gens = sys.zeeman_generators
    return sys.zero_field_matrix + b[0] * gens[0] + b[1] * gens[1] + b[2] * gens[2]


def solve(sys: SpinSystem, B) -> EigenSolution:
    b = as_field(B)
    return eigensolve(build_hamiltonian(sys, b), field=b)


def build_hamiltonians(sys: SpinSystem, fields) -> np.ndarray:
    """Stack of Hamiltonians, one per row of ``fields`` (shape (n, 3))."""
    b = np.asarray(fields, dtype=float).reshape(-1, 3)
    gens = np.array(sys.zeeman_generators)
    return sys.zero_field_matrix[None] + np.einsum("np,pij->nij", b, gens)


def solve_batch(sys: SpinSystem, fields) -> tuple[np.ndarray, np.ndarray]:
    return eigensolve_batch(build_hamiltonians(sys, fields))


def transition_frequency(sol: EigenSolution, t: TransitionId, tol: float = DEGENERACY_TOL) -> float:
    """Upper minus lower energy; levels inside a degenerate cluster use the cluster mean."""

    def level(k):
        return float(np.mean(sol.energies[sol.cluster_of(k, tol)]))

    return level(t.upper) - level(t.lower)


def zero_field_levels(A_principal) -> dict[str, float]:
    """Closed-form S = I = 1/2 zero-field energies keyed by Bell-state label."""
    ax, ay, az = (float(v) for v in A_principal)
    levels = {
        "psi+": 0.25 * (az + (ax - ay)),
        "psi-": 0.25 * (az - (ax - ay)),
        "phi+": 0.25 * (-az + (ax + ay)),
        "phi-": 0.25 * (-az - (ax + ay)),
    }
    clash = [
        (a, b)
        for i, a in enumerate(ZERO_FIELD_LABELS)
        for b in ZERO_FIELD_LABELS[i + 1 :]
        if abs(levels[a] - levels[b]) <= DEGENERACY_TOL
    ]
    if clash:
        pairs = ", ".join(f"{a}={b}" for a, b in clash)
        raise DegenerateLevelsError(f"zero-field levels degenerate ({pairs}); labels are ambiguous")
    return levels


def bell_states(orientation: EulerAngles | None = None) -> dict[str, np.ndarray]:
    """Zero-field eigenstates of S.A.I keyed so their energies follow ``zero_field_levels``.

    In the |m_S, m_I> basis (m_S outer) the state with energy (A_z + A_x - A_y)/4
    is (|up,up> + |dn,dn>)/sqrt2, so the psi pair is built from the parallel
    configurations and the phi pair from the antiparallel ones.
    """
    r2 = np.sqrt(0.5)
    e = np.eye(4, dtype=complex)
    states = {
        "psi+": r2 * (e[0] + e[3]),
        "psi-": r2 * (e[0] - e[3]),
        "phi+": r2 * (e[1] + e[2]),
        "phi-": r2 * (e[1] - e[2]),
    }
    if orientation is None:
        return states
    u = spin_rotation(HALF, orientation)
    w = np.kron(u, u)
    return {k: w @ v for k, v in states.items()}


def label_zero_field_states(sys: SpinSystem, sol: EigenSolution | None = None) -> dict[str, int]:
    """Map psi+/psi-/phi+/phi- to level indices by maximal overlap with the Bell states."""
    if sys.S.twice != 1 or sys.I.twice != 1:
        raise ValueError("Bell-state labels exist only for S = I = 1/2")
    zero_field_levels(sys.A.principal_values)  # raises on degeneracy
    sol = sol if sol is not None else solve(sys, np.zeros(3))
    overlaps = {
        name: np.abs(sol.states.conj().T @ vec) ** 2 for name, vec in bell_states(sys.A.orientation).items()
    }
    labels = {name: int(np.argmax(ov)) for name, ov in overlaps.items()}
    if len(set(labels.values())) != 4:
        raise DegenerateLevelsError(f"Bell-state overlaps do not give a one-to-one labelling: {labels}")
    return labels


def labeled_transition(sys: SpinSystem, a: str, b: str) -> TransitionId:
    """TransitionId between two zero-field labelled levels, lower index first."""
    labels = label_zero_field_states(sys)
    i, j = sorted((labels[a], labels[b]))
    return TransitionId(i, j)


def reduced_density_matrix(state, dims: tuple[int, int], subsystem: str = "electron") -> np.ndarray:
    """Partial trace of |v><v| keeping the electron (outer) or nuclear (inner) factor."""
    v = np.asarray(state, dtype=complex).reshape(dims)
    if subsystem == "electron":
        return v @ v.conj().T
    if subsystem == "nuclear":
        return v.T @ v.conj()
    raise ValueError(f"subsystem must be 'electron' or 'nuclear', got {subsystem!r}")


def spin_expectations(sys: SpinSystem, state) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(state, dtype=complex)
    s = np.array([np.vdot(v, op @ v).real for op in sys.ops.S])
    i = np.array([np.vdot(v, op @ v).real for op in sys.ops.I])
    return s, i


def transition_moments(sol: EigenSolution, sys: SpinSystem, t: TransitionId, B_ac) -> tuple[complex, float]:
    """Drive matrix element <f|mu_B B_ac.g.S - mu_n B_ac.g_n.I|i> in MHz and Rabi frequency 2|M|."""
    b = as_field(B_ac)
    drive = sum(b[p] * sys.zeeman_generators[p] for p in range(3))
    m = complex(np.vdot(sol.state(t.upper), drive @ sol.state(t.lower)))
    return m, 2.0 * abs(m)


def subsite_counterpart(sys: SpinSystem) -> SpinSystem:
    """Same system with every tensor conjugated by a pi rotation about b."""

    def flip(t: TensorSpec | None):
        if t is None:
            return None
        o = t.orientation
        return TensorSpec(t.principal_values, EulerAngles(o.alpha + np.pi, o.beta, o.gamma))

    label = f"{sys.label} (C2 partner)" if sys.label else "C2 partner"
    return replace(sys, A=flip(sys.A), g=flip(sys.g), g_n_tensor=flip(sys.g_n_tensor), Q=flip(sys.Q), label=label)
