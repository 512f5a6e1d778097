"""First- and second-order Zeeman sensitivities of spin and optical transitions.

Gradients are in MHz/T and curvatures in MHz/T^2, expressed in the (D1, D2, b)
lab frame. Three independent routes are provided: Hellmann-Feynman expectation
values, finite differences with eigenstate tracking, and the low-field closed
forms for coaligned S = I = 1/2 tensors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eigen import DEGENERACY_TOL, EigenSolution
from .hamiltonian import DegenerateLevelsError, SpinSystem, TransitionId, solve, solve_batch
from .spin_core import MU_B_OVER_H, Constants, as_field

DEFAULT_STEP = 10e-6  # T
NEAR_ZERO_STEP = 1e-6  # T
NEAR_ZERO_FIELD = 1e-3  # T
TRACKING_MARGIN = 0.1


class LevelTrackingError(RuntimeError):
    """Eigenstate tracking between neighbouring field points was ambiguous."""


@dataclass(frozen=True)
class OpticalTransition:
    ground_level: int
    excited_level: int

    def __str__(self):
        return f"g{self.ground_level}-e{self.excited_level}"


@dataclass(frozen=True)
class TransitionSensitivity:
    nu: float
    S1: np.ndarray
    S2: np.ndarray
    field: np.ndarray
    transition: TransitionId | OpticalTransition

    @property
    def gradient_norm(self) -> float:
        return float(np.linalg.norm(self.S1))

    @property
    def curvature_max(self) -> float:
        """Largest |eigenvalue| of S2."""
        return float(np.max(np.abs(np.linalg.eigvalsh(self.S2))))


def in_bohr_units(value, constants: Constants | None = None):
    """Convert MHz/T to units of mu_B/h."""
    mu_b = constants.mu_B_over_h if constants is not None else MU_B_OVER_H
    return np.asarray(value) / mu_b


def _require_nondegenerate(sol: EigenSolution, levels, tol=DEGENERACY_TOL):
    for k in levels:
        cluster = sol.cluster_of(k, tol)
        if len(cluster) > 1:
            raise DegenerateLevelsError(
                f"level {k} lies in degenerate cluster {cluster} "
                f"(energies {np.round(sol.energies[cluster], 9).tolist()} MHz); "
                "Hellmann-Feynman derivative is undefined"
            )


def level_gradient(sys: SpinSystem, sol: EigenSolution, k: int) -> np.ndarray:
    v = sol.state(k)
    return np.array([np.vdot(v, g @ v).real for g in sys.zeeman_generators])


def level_curvature(sys: SpinSystem, sol: EigenSolution, n: int, tol=DEGENERACY_TOL) -> np.ndarray:
    """Second-order perturbation sum 2 Re sum_k <n|G_p|k><k|G_q|n> / (E_n - E_k)."""
    vn = sol.state(n)
    gv = np.array([g @ vn for g in sys.zeeman_generators])  # (3, d)
    m = sol.states.conj().T @ gv.T  # m[k, p] = <k|G_p|n>
    hess = np.zeros((3, 3))
    for k in range(sol.dim):
        if k == n:
            continue
        gap = sol.energies[n] - sol.energies[k]
        coupling = np.abs(m[k]).max()
        if abs(gap) <= tol:
            if coupling > 1e-9 * max(1.0, np.abs(m).max()):
                raise DegenerateLevelsError(
                    f"levels {n} and {k} are degenerate (gap {gap:.3e} MHz) and field-coupled; "
                    "perturbation sum diverges"
                )
            continue
        hess += 2.0 * np.real(np.outer(m[k].conj(), m[k])) / gap
    return (hess + hess.T) / 2


def gradient_hellmann_feynman(sys: SpinSystem, B, t: TransitionId, sol: EigenSolution | None = None) -> np.ndarray:
    sol = sol if sol is not None else solve(sys, B)
    _require_nondegenerate(sol, (t.lower, t.upper))
    return level_gradient(sys, sol, t.upper) - level_gradient(sys, sol, t.lower)


def curvature_perturbation(sys: SpinSystem, B, t: TransitionId, sol: EigenSolution | None = None) -> np.ndarray:
    sol = sol if sol is not None else solve(sys, B)
    _require_nondegenerate(sol, (t.lower, t.upper))
    return level_curvature(sys, sol, t.upper) - level_curvature(sys, sol, t.lower)


def gradients_batch(sys: SpinSystem, fields, t: TransitionId, tol=DEGENERACY_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Hellmann-Feynman gradients (n, 3) and frequencies (n,) for many fields.

    Rows whose transition levels are degenerate come back as NaN.
    """
    energies, states = solve_batch(sys, fields)
    gens = np.array(sys.zeeman_generators)

    def level_grad(k):
        v = states[:, :, k]
        return np.einsum("ni,pij,nj->np", v.conj(), gens, v).real

    grad = level_grad(t.upper) - level_grad(t.lower)
    nu = energies[:, t.upper] - energies[:, t.lower]
    gaps = np.diff(energies, axis=1)
    bad = np.zeros(len(nu), dtype=bool)
    for k in (t.lower, t.upper):
        if k > 0:
            bad |= gaps[:, k - 1] <= tol
        if k < energies.shape[1] - 1:
            bad |= gaps[:, k] <= tol
    grad[bad] = np.nan
    nu[bad] = np.nan
    return grad, nu


def curvatures_batch(sys: SpinSystem, fields, t: TransitionId, tol=DEGENERACY_TOL) -> np.ndarray:
    """Perturbation-sum curvatures (n, 3, 3); rows with any near-degenerate gap are NaN."""
    energies, states = solve_batch(sys, fields)
    gens = np.array(sys.zeeman_generators)
    # m[n, p, k, l] = <k|G_p|l>
    m = np.einsum("nik,pij,njl->npkl", states.conj(), gens, states)
    gaps = energies[:, :, None] - energies[:, None, :]  # E_l - E_k as gaps[n, l, k]
    bad = np.zeros(len(energies), dtype=bool)

    def level_hess(lv):
        g = gaps[:, lv, :].copy()
        g[:, lv] = np.inf
        near = np.abs(g) <= tol
        nonlocal bad
        bad |= near.any(axis=1)
        inv = np.where(near, 0.0, 1.0 / np.where(near, 1.0, g))
        col = m[:, :, :, lv]  # <k|G_p|lv>, shape (n, 3, d)
        h = 2.0 * np.einsum("npk,nqk,nk->npq", col.conj(), col, inv).real
        return (h + h.transpose(0, 2, 1)) / 2

    hess = level_hess(t.upper) - level_hess(t.lower)
    hess[bad] = np.nan
    return hess


def _default_step(B) -> float:
    return NEAR_ZERO_STEP if np.linalg.norm(B) < NEAR_ZERO_FIELD else DEFAULT_STEP


class _Tracker:
    """Transition frequency at displaced fields, following the reference eigenstates."""

    def __init__(self, sys: SpinSystem, B, levels):
        self.sys = sys
        self.B = as_field(B)
        self.ref = solve(sys, self.B)
        _require_nondegenerate(self.ref, levels)
        self.levels = levels
        self.vecs = [self.ref.state(k) for k in levels]

    def energies(self, dB) -> list[float]:
        sol = solve(self.sys, self.B + dB)
        out = []
        for k, v in zip(self.levels, self.vecs):
            ov = np.abs(sol.states.conj().T @ v) ** 2
            order = np.argsort(ov)[::-1]
            if ov[order[0]] - ov[order[1]] < TRACKING_MARGIN:
                raise LevelTrackingError(
                    f"level {k} cannot be tracked to B + {np.asarray(dB).tolist()} T "
                    f"(overlaps {ov[order[0]]:.3f} vs {ov[order[1]]:.3f}); level crossing "
                    "inside the stencil, use a smaller step"
                )
            out.append(float(sol.energies[order[0]]))
        return out


def _nu(tracker: _Tracker, dB) -> float:
    lo, up = tracker.energies(dB)
    return up - lo


def gradient_finite_difference(sys: SpinSystem, B, t: TransitionId, step: float | None = None) -> np.ndarray:
    """Central differences at steps h and h/2 combined by Richardson extrapolation."""
    h = _default_step(B) if step is None else float(step)
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    tr = _Tracker(sys, B, (t.lower, t.upper))
    grad = np.zeros(3)
    for p in range(3):
        e = np.zeros(3)
        e[p] = 1.0
        d1 = (_nu(tr, h * e) - _nu(tr, -h * e)) / (2 * h)
        d2 = (_nu(tr, 0.5 * h * e) - _nu(tr, -0.5 * h * e)) / h
        grad[p] = (4 * d2 - d1) / 3
    return grad


def curvature(sys: SpinSystem, B, t: TransitionId, step: float | None = None) -> np.ndarray:
    """Symmetrized Hessian of the transition frequency from a 3x3 stencil per axis pair."""
    h = _default_step(B) if step is None else float(step)
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    tr = _Tracker(sys, B, (t.lower, t.upper))
    nu0 = _nu(tr, np.zeros(3))
    eye = np.eye(3)
    hess = np.zeros((3, 3))
    for p in range(3):
        hess[p, p] = (_nu(tr, h * eye[p]) - 2 * nu0 + _nu(tr, -h * eye[p])) / h**2
        for q in range(p + 1, 3):
            pp, pm = h * (eye[p] + eye[q]), h * (eye[p] - eye[q])
            hess[p, q] = hess[q, p] = (_nu(tr, pp) - _nu(tr, pm) - _nu(tr, -pm) + _nu(tr, -pp)) / (4 * h**2)
    return (hess + hess.T) / 2


def transition_sensitivity(sys: SpinSystem, B, t: TransitionId) -> TransitionSensitivity:
    """Frequency, Hellmann-Feynman gradient and perturbation-sum curvature at B."""
    b = as_field(B)
    sol = solve(sys, b)
    _require_nondegenerate(sol, (t.lower, t.upper))
    nu = float(sol.energies[t.upper] - sol.energies[t.lower])
    s1 = gradient_hellmann_feynman(sys, b, t, sol)
    s2 = curvature_perturbation(sys, b, t, sol)
    return TransitionSensitivity(nu, s1, s2, b, t)


def optical_sensitivity(
    ground: SpinSystem,
    excited: SpinSystem,
    B,
    ground_level: int,
    excited_level: int,
    offset: float = 0.0,
) -> TransitionSensitivity:
    """Sensitivity of the optical line between a ground and an excited hyperfine level.

    Both electronic states see the same field, so the optical gradient and
    curvature are differences of the two level sensitivities.
    """
    b = as_field(B)
    sol_g, sol_e = solve(ground, b), solve(excited, b)
    _require_nondegenerate(sol_g, (ground_level,))
    _require_nondegenerate(sol_e, (excited_level,))
    nu = offset + float(sol_e.energies[excited_level] - sol_g.energies[ground_level])
    s1 = level_gradient(excited, sol_e, excited_level) - level_gradient(ground, sol_g, ground_level)
    s2 = level_curvature(excited, sol_e, excited_level) - level_curvature(ground, sol_g, ground_level)
    return TransitionSensitivity(nu, s1, s2, b, OpticalTransition(ground_level, excited_level))


def cluster_slopes(sys: SpinSystem, sol: EigenSolution, cluster) -> np.ndarray:
    """First-order level slopes inside a degenerate cluster, one row per field axis.

    Row p holds the eigenvalues of P G_p P restricted to the cluster, i.e. how
    the degenerate sublevels split for a small field along axis p.
    """
    vecs = sol.states[:, list(cluster)]
    return np.array([np.linalg.eigvalsh(vecs.conj().T @ g @ vecs) for g in sys.zeeman_generators])


def first_order_sensitivity(sys: SpinSystem, B, t: TransitionId, sol: EigenSolution | None = None) -> np.ndarray:
    """Gradient of a transition, falling back to degenerate perturbation theory.

    For nondegenerate levels this is the Hellmann-Feynman gradient. When either
    level sits in a degenerate cluster the frequency is not differentiable; the
    returned vector then holds, per axis, the largest first-order frequency
    slope over all sublevel pairings.
    """
    sol = sol if sol is not None else solve(sys, B)
    lo, up = sol.cluster_of(t.lower), sol.cluster_of(t.upper)
    if len(lo) == 1 and len(up) == 1:
        return gradient_hellmann_feynman(sys, B, t, sol)
    s_lo, s_up = cluster_slopes(sys, sol, lo), cluster_slopes(sys, sol, up)
    if lo == up:
        return np.array([row.max() - row.min() for row in s_lo])
    return np.array([np.abs(s_up[p][:, None] - s_lo[p][None, :]).max() for p in range(3)])


@dataclass(frozen=True)
class ClosedFormGradient:
    general: float
    planar: float | None


def closed_form_gradient(
    A_principal,
    g_principal,
    B,
    constants: Constants | None = None,
    pair: str = "phi",
) -> ClosedFormGradient:
    """Low-field |S1| for coaligned A and g tensors with S = I = 1/2.

    ``B`` is given in the common principal frame of the two tensors. The
    expression is second-order perturbation theory in the electronic Zeeman
    term; nuclear Zeeman is neglected. Its x and y terms hold for both
    zero-field pairs, while the z term with denominator A_x + A_y
    belongs to the phi pair. ``pair="psi"`` uses A_x - A_y instead.
    When B_z = 0 the A_z >> A_x, A_y simplification is returned as ``planar``.
    """
    mu_b = (constants or Constants()).mu_B_over_h
    ax, ay, az = (float(v) for v in A_principal)
    gx, gy, gz = (float(v) for v in g_principal)
    bx, by, bz = as_field(B)
    if np.isclose(abs(ax), abs(az), rtol=1e-12, atol=0) or np.isclose(abs(ay), abs(az), rtol=1e-12, atol=0):
        raise ValueError("|A_x| or |A_y| equals |A_z|: closed-form gradient is singular")
    if pair == "phi":
        zden = ax + ay
    elif pair == "psi":
        zden = ax - ay
    else:
        raise ValueError(f"pair must be 'phi' or 'psi', got {pair!r}")
    if zden == 0 and bz != 0:
        raise ValueError("zero-field pair is degenerate: z term is singular")
    zterm = (bz**2 * gz**4 / zden**2) if bz != 0 else 0.0
    general = 2 * mu_b**2 * np.sqrt(
        zterm + by**2 * gy**4 * ax**2 / (ax**2 - az**2) ** 2 + bx**2 * gx**4 * ay**2 / (ay**2 - az**2) ** 2
    )
    planar = None
    if bz == 0:
        bmag = np.hypot(bx, by)
        phi = np.arctan2(by, bx)
        planar = 2 * mu_b**2 * bmag / az**2 * np.sqrt(
            gy**4 * ax**2 * np.sin(phi) ** 2 + gx**4 * ay**2 * np.cos(phi) ** 2
        )
    return ClosedFormGradient(float(general), None if planar is None else float(planar))
