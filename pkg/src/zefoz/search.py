"""Angular gradient maps, direction optimisation and zero-field ZEFOZ reports."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .decoherence import NoiseVector, noise_rates
from .hamiltonian import DegenerateLevelsError, SpinSystem, TransitionId, solve
from .sensitivity import (
    OpticalTransition,
    cluster_slopes,
    curvature_perturbation,
    curvatures_batch,
    first_order_sensitivity,
    gradient_hellmann_feynman,
    gradients_batch,
    level_curvature,
)
from .spin_core import spherical_field

ZEFOZ_THRESHOLD = 1e-3  # MHz/T
NM_MAX_ITER = 500
NM_XTOL = 0.01  # degrees, simplex diameter
NM_FTOL = 1e-3  # relative value change
REFINE_STEP = 0.05  # degrees
REFINE_HALF_WIDTH = 4  # grid points either side
ANISOTROPY_TOL = 1e-6  # MHz


def _axis(lo: float, hi: float, step: float) -> np.ndarray:
    if not step > 0:
        raise ValueError("grid step must be positive")
    if hi < lo:
        raise ValueError(f"grid range ({lo}, {hi}) is reversed")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


@dataclass(frozen=True)
class GridSpec:
    theta: tuple[float, float, float] = (-10.0, 10.0, 0.5)
    phi: tuple[float, float, float] = (-90.0, 0.0, 0.5)

    @property
    def thetas(self) -> np.ndarray:
        return _axis(*self.theta)

    @property
    def phis(self) -> np.ndarray:
        return _axis(*self.phi)


@dataclass(frozen=True)
class AngularGrid:
    """|S1| on a (theta, phi) grid; rows are theta, columns are phi. Invalid cells are NaN."""

    spec: GridSpec
    magnitude: float
    values: np.ndarray
    t2: np.ndarray | None = None

    def __post_init__(self):
        shape = (len(self.spec.thetas), len(self.spec.phis))
        if self.values.shape != shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {shape}")

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)

    def argmin(self) -> tuple[float, float, float]:
        """(theta, phi, |S1|) of the smallest valid cell."""
        v = np.where(self.valid, self.values, np.inf)
        i, j = np.unravel_index(int(np.argmin(v)), v.shape)
        return float(self.spec.thetas[i]), float(self.spec.phis[j]), float(v[i, j])

    def orders_of_magnitude(self) -> float:
        v = self.values[self.valid]
        v = v[v > 0]
        return float(np.log10(v.max() / v.min())) if len(v) else 0.0

    def rows(self):
        """Row-major (theta outer) cells: theta, phi, |S1|, log10|S1|, T2 (or None)."""
        for i, th in enumerate(self.spec.thetas):
            for j, ph in enumerate(self.spec.phis):
                g = float(self.values[i, j])
                lg = math.log10(g) if g > 0 else (-math.inf if g == 0 else math.nan)
                t2 = None if self.t2 is None else float(self.t2[i, j])
                yield float(th), float(ph), g, lg, t2


def _grid_fields(magnitude: float, thetas, phis) -> np.ndarray:
    th, ph = np.meshgrid(np.radians(thetas), np.radians(phis), indexing="ij")
    d = np.stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), np.sin(th)], axis=-1)
    return magnitude * d.reshape(-1, 3)


def _t2_from(grad: np.ndarray, hess: np.ndarray, noise: NoiseVector) -> np.ndarray:
    out = np.full(len(grad), np.nan)
    for k in range(len(grad)):
        if np.all(np.isfinite(grad[k])) and np.all(np.isfinite(hess[k])):
            lin, quad = noise_rates(grad[k], hess[k], noise)
            out[k] = math.inf if lin + quad == 0 else 1.0 / (math.pi * (lin + quad))
    return out


def angular_gradient_map(
    sys: SpinSystem,
    magnitude: float,
    grid: GridSpec | None = None,
    t: TransitionId | None = None,
    noise: NoiseVector | None = None,
    chunk: int = 1024,
    workers: int = 1,
) -> AngularGrid:
    """Hellmann-Feynman |S1| over field directions at fixed |B|.

    Cells where the transition levels are degenerate are NaN rather than errors.
    With ``noise`` the T2 prediction for each cell is attached as well.
    Chunks may run on ``workers`` threads; results are assembled in input order.
    """
    grid = grid or GridSpec()
    if t is None:
        raise ValueError("a transition is required")
    thetas, phis = grid.thetas, grid.phis
    fields = _grid_fields(magnitude, thetas, phis)

    def work(part):
        g, _ = gradients_batch(sys, part, t)
        t2 = _t2_from(g, curvatures_batch(sys, part, t), noise) if noise is not None else None
        return np.linalg.norm(g, axis=1), t2

    parts = [fields[k : k + chunk] for k in range(0, len(fields), chunk)]
    if workers > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, parts))
    else:
        results = [work(p) for p in parts]
    shape = (len(thetas), len(phis))
    values = np.concatenate([r[0] for r in results]).reshape(shape)
    t2 = np.concatenate([r[1] for r in results]).reshape(shape) if noise is not None else None
    return AngularGrid(grid, float(magnitude), values, t2)


def gradient_at(sys: SpinSystem, magnitude: float, theta: float, phi: float, t: TransitionId) -> float:
    """|S1| at one direction; NaN when the levels are degenerate there."""
    g, _ = gradients_batch(sys, spherical_field(magnitude, theta, phi)[None, :], t)
    return float(np.linalg.norm(g[0]))


@dataclass(frozen=True)
class OptimumReport:
    theta: float
    phi: float
    gradient: float  # MHz/T
    t2: float | None  # s, None when no noise model was given or the rate vanishes
    iterations: int
    converged: bool
    trace: list[tuple[float, float, float]] = field(default_factory=list)
    refined: bool = False

    @property
    def warning(self) -> str | None:
        if self.converged:
            return None
        return f"Nelder-Mead did not converge in {NM_MAX_ITER} iterations; best sample returned"


def _nelder_mead(f, x0, step=1.0, max_iter=NM_MAX_ITER):
    """Plain Nelder-Mead in 2-d; returns best point, value, iterations, converged, history."""
    pts = [np.asarray(x0, dtype=float)]
    pts += [pts[0] + step * e for e in np.eye(2)]
    vals = [f(p) for p in pts]
    history = [(float(p[0]), float(p[1]), float(v)) for p, v in zip(pts, vals)]

    def ev(p):
        v = f(p)
        history.append((float(p[0]), float(p[1]), float(v)))
        return v

    converged = False
    it = 0
    prev_best = None
    for it in range(1, max_iter + 1):
        order = np.argsort(vals, kind="stable")
        pts = [pts[k] for k in order]
        vals = [vals[k] for k in order]
        diam = max(np.linalg.norm(pts[i] - pts[j]) for i in range(3) for j in range(i + 1, 3))
        best = vals[0]
        if prev_best is not None and diam < NM_XTOL:
            change = abs(prev_best - best) / max(abs(best), 1e-300)
            spread = abs(vals[-1] - best) / max(abs(best), 1e-300)
            if change < NM_FTOL and spread < NM_FTOL or diam < NM_XTOL * 1e-3:
                converged = True
                break
        prev_best = best
        centroid = (pts[0] + pts[1]) / 2
        xr = centroid + (centroid - pts[2])
        fr = ev(xr)
        if fr < vals[0]:
            xe = centroid + 2 * (centroid - pts[2])
            fe = ev(xe)
            pts[2], vals[2] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < vals[1]:
            pts[2], vals[2] = xr, fr
        else:
            if fr < vals[2]:
                xc = centroid + 0.5 * (xr - centroid)
            else:
                xc = centroid + 0.5 * (pts[2] - centroid)
            fc = ev(xc)
            if fc < min(fr, vals[2]):
                pts[2], vals[2] = xc, fc
            else:
                for k in (1, 2):
                    pts[k] = pts[0] + 0.5 * (pts[k] - pts[0])
                    vals[k] = ev(pts[k])
    k = int(np.argmin(vals))
    return pts[k], vals[k], it, converged, history


def minimize_gradient_direction(
    sys: SpinSystem,
    magnitude: float,
    initial: tuple[float, float],
    t: TransitionId,
    noise: NoiseVector | None = None,
    domain: GridSpec | None = None,
    step: float = 1.0,
) -> OptimumReport:
    """Minimise |S1| over (theta, phi) by Nelder-Mead, then polish on a 0.05 degree grid."""
    domain = domain or GridSpec()
    (tlo, thi, _), (plo, phi_hi, _) = domain.theta, domain.phi
    th0, ph0 = initial
    if not (tlo <= th0 <= thi and plo <= ph0 <= phi_hi):
        raise ValueError(f"initial point {initial} lies outside the grid domain")

    def f(p):
        v = gradient_at(sys, magnitude, p[0], p[1], t)
        return v if math.isfinite(v) else math.inf

    x, fx, iters, converged, history = _nelder_mead(f, (th0, ph0), step=step)

    # local refinement guards against stopping on a shoulder
    offs = REFINE_STEP * np.arange(-REFINE_HALF_WIDTH, REFINE_HALF_WIDTH + 1)
    local = angular_gradient_map(
        sys,
        magnitude,
        GridSpec(
            (x[0] + offs[0], x[0] + offs[-1], REFINE_STEP),
            (x[1] + offs[0], x[1] + offs[-1], REFINE_STEP),
        ),
        t,
    )
    lt, lp, lv = local.argmin()
    refined = lv < fx
    if refined:
        x, fx = np.array([lt, lp]), lv
    history.append((float(x[0]), float(x[1]), float(fx)))
    # never report worse than any sample seen
    best = min(history, key=lambda h: h[2])
    if best[2] < fx:
        x, fx = np.array(best[:2]), best[2]

    t2 = None
    if noise is not None:
        b = spherical_field(magnitude, x[0], x[1])
        sol = solve(sys, b)
        lin, quad = noise_rates(gradient_hellmann_feynman(sys, b, t, sol), curvature_perturbation(sys, b, t, sol), noise)
        t2 = None if lin + quad == 0 else 1.0 / (math.pi * (lin + quad))
    return OptimumReport(float(x[0]), float(x[1]), float(fx), t2, iters, converged, history, refined)


@dataclass(frozen=True)
class ReportRow:
    transition: str
    nu: float  # MHz
    gradient: float  # MHz/T
    curvature: float | None  # MHz/T^2 spectral norm; None where undefined (degenerate)
    passed: bool
    note: str = ""


@dataclass(frozen=True)
class ZeroFieldReport:
    rows: list[ReportRow]
    anisotropic: bool
    anisotropy_note: str

    @property
    def all_pass(self) -> bool:
        return all(r.passed for r in self.rows)


def anisotropy_check(sys: SpinSystem) -> tuple[bool, str]:
    """Three distinct nonzero hyperfine principal values, else name the offending pair."""
    names = ("A_x", "A_y", "A_z")
    a = sys.A.principal_values
    problems = [f"{n} = 0" for n, v in zip(names, a) if abs(v) <= ANISOTROPY_TOL]
    problems += [
        f"{names[i]} = {names[j]} (degenerate)"
        for i in range(3)
        for j in range(i + 1, 3)
        if abs(a[i] - a[j]) <= ANISOTROPY_TOL
    ]
    return (not problems, "; ".join(problems) or "fully anisotropic")


def _curv_norm(sys, sol, t) -> float | None:
    try:
        h = level_curvature(sys, sol, t.upper) - level_curvature(sys, sol, t.lower)
    except DegenerateLevelsError:
        return None
    return float(np.max(np.abs(np.linalg.eigvalsh(h))))


def _mean_level(sol, k) -> float:
    return float(np.mean(sol.energies[sol.cluster_of(k)]))


def zero_field_report(
    ground: SpinSystem,
    excited: SpinSystem | None = None,
    optical_offset: float = 0.0,
    threshold: float = ZEFOZ_THRESHOLD,
) -> ZeroFieldReport:
    """Evaluate every ground (and optical, if ``excited``) transition at B = 0."""
    zero = np.zeros(3)
    sol = solve(ground, zero)
    rows = []
    for i in range(sol.dim):
        for j in range(i + 1, sol.dim):
            t = TransitionId(i, j)
            grad = float(np.linalg.norm(first_order_sensitivity(ground, zero, t, sol)))
            degenerate = len(sol.cluster_of(i)) > 1 or len(sol.cluster_of(j)) > 1
            rows.append(
                ReportRow(
                    f"ground {t}",
                    _mean_level(sol, j) - _mean_level(sol, i),
                    grad,
                    _curv_norm(ground, sol, t),
                    grad <= threshold,
                    "degenerate levels; largest first-order sublevel slope" if degenerate else "",
                )
            )
    if excited is not None:
        sol_e = solve(excited, zero)
        for i in range(sol.dim):
            for j in range(sol_e.dim):
                ot = OpticalTransition(i, j)
                ci, cj = sol.cluster_of(i), sol_e.cluster_of(j)
                slopes_g = cluster_slopes(ground, sol, ci)
                slopes_e = cluster_slopes(excited, sol_e, cj)
                grad = float(np.linalg.norm([np.abs(slopes_e[p][:, None] - slopes_g[p][None, :]).max() for p in range(3)]))
                curv = None
                if len(ci) == 1 and len(cj) == 1:
                    try:
                        h = level_curvature(excited, sol_e, j) - level_curvature(ground, sol, i)
                        curv = float(np.max(np.abs(np.linalg.eigvalsh(h))))
                    except DegenerateLevelsError:
                        pass
                rows.append(
                    ReportRow(
                        f"optical {ot}",
                        optical_offset + _mean_level(sol_e, j) - _mean_level(sol, i),
                        grad,
                        curv,
                        grad <= threshold,
                    )
                )
    ok, note = anisotropy_check(ground)
    if excited is not None:
        ok_e, note_e = anisotropy_check(excited)
        ok = ok and ok_e
        note = f"ground: {note}; excited: {note_e}"
    return ZeroFieldReport(rows, ok, note)

