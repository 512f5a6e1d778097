"""Cyclic Jacobi diagonalization for small dense complex Hermitian matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

JACOBI_TOL = 1e-13
MAX_SWEEPS = 100
DEGENERACY_TOL = 1e-6  # MHz


class NotHermitianError(ValueError):
    pass


class JacobiConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class EigenSolution:
    """Ascending energies (MHz) with eigenvectors stored as the columns of ``states``."""

    energies: np.ndarray
    states: np.ndarray
    field: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return len(self.energies)

    def state(self, k: int) -> np.ndarray:
        return self.states[:, k]

    def clusters(self, tol: float = DEGENERACY_TOL) -> list[list[int]]:
        """Group level indices whose neighbouring energies differ by at most ``tol``."""
        groups = [[0]]
        for k in range(1, self.dim):
            if self.energies[k] - self.energies[k - 1] <= tol:
                groups[-1].append(k)
            else:
                groups.append([k])
        return groups

    def cluster_of(self, k: int, tol: float = DEGENERACY_TOL) -> list[int]:
        for group in self.clusters(tol):
            if k in group:
                return group
        raise IndexError(k)


def check_hermitian(h: np.ndarray, tol: float = 1e-9) -> float:
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise NotHermitianError(f"expected a square matrix, got shape {h.shape}")
    asym = float(np.max(np.abs(h - h.conj().T))) if h.size else 0.0
    scale = max(1.0, float(np.linalg.norm(h)))
    if asym > tol * scale:
        raise NotHermitianError(f"matrix is not Hermitian: max |H - H^dagger| = {asym:.3e}")
    return asym


def _offdiag_norm(a: np.ndarray) -> float:
    off = a[~np.eye(a.shape[0], dtype=bool)]
    return float(np.sqrt(np.sum(off.real**2 + off.imag**2)))


def jacobi_eigh(h: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = MAX_SWEEPS):
    """Eigenvalues (unsorted) and eigenvector columns of a Hermitian matrix."""
    a = np.array(h, dtype=complex)
    a = (a + a.conj().T) / 2
    n = a.shape[0]
    v = np.eye(n, dtype=complex)
    scale = float(np.linalg.norm(a))
    if n < 2 or scale == 0.0:
        return np.real(np.diag(a)).copy(), v
    target = tol * scale
    # one sweep past the tolerance: convergence is quadratic, so this takes the
    # off-diagonal to round-off and sharpens vectors of nearly degenerate levels
    polished = False
    for _ in range(max_sweeps):
        if _offdiag_norm(a) <= target:
            if polished:
                break
            polished = True
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = complex(a[p, q])
                mag = abs(apq)
                if mag <= 1e-300 or mag < 1e-18 * scale:
                    a[p, q] = a[q, p] = 0.0
                    continue
                phase = apq / mag
                app, aqq = a[p, p].real, a[q, q].real
                tau = (aqq - app) / (2.0 * mag)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                # phase-fix column q so a[p, q] is real, then a real Jacobi rotation:
                # U = [[c, s], [-s e^{-i phi}, c e^{-i phi}]]
                w = phase.conjugate()
                u10, u11 = -s * w, c * w
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp + u10 * cq
                a[:, q] = s * cp + u11 * cq
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp + u10.conjugate() * rq
                a[q, :] = s * rp + u11.conjugate() * rq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp + u10 * vq
                v[:, q] = s * vp + u11 * vq
                a[p, q] = a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
    else:
        if _offdiag_norm(a) > target:
            raise JacobiConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
    return np.real(np.diag(a)).copy(), v


def _fix_phases(vecs: np.ndarray) -> np.ndarray:
    out = vecs.copy()
    for k in range(out.shape[1]):
        col = out[:, k]
        mags = np.abs(col)
        # first component within round-off of the largest magnitude
        lead = int(np.flatnonzero(mags >= mags.max() * (1 - 1e-9))[0])
        out[:, k] = col * (abs(col[lead]) / col[lead])
    return out


def eigensolve(h: np.ndarray, field=None) -> EigenSolution:
    """Diagonalize a Hermitian matrix with ascending energies and fixed phases.

    The largest-magnitude component of every eigenvector is made real and
    positive so repeated calls give identical vectors.
    """
    check_hermitian(h)
    vals, vecs = jacobi_eigh(h)
    order = np.argsort(vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    vecs = _fix_phases(vecs)
    return EigenSolution(vals, vecs, None if field is None else np.asarray(field, dtype=float))


def jacobi_eigh_batch(h: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = MAX_SWEEPS):
    """Cyclic Jacobi applied to a stack of Hermitian matrices at once, shape (n, d, d)."""
    a = np.array(h, dtype=complex)
    a = (a + np.conj(np.swapaxes(a, -1, -2))) / 2
    n, d, _ = a.shape
    v = np.broadcast_to(np.eye(d, dtype=complex), a.shape).copy()
    scale = np.linalg.norm(a, axis=(1, 2))
    target = tol * scale
    off_mask = ~np.eye(d, dtype=bool)

    def offdiag():
        return np.sqrt(np.sum(np.abs(a[:, off_mask]) ** 2, axis=1))

    polished = False
    for _ in range(max_sweeps):
        if np.all(offdiag() <= target):
            if polished:
                break
            polished = True
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[:, p, q]
                mag = np.abs(apq)
                active = mag > np.maximum(1e-300, 1e-18 * scale)
                safe = np.where(active, mag, 1.0)
                phase = np.where(active, apq / safe, 1.0)
                tau = (a[:, q, q].real - a[:, p, p].real) / (2.0 * safe)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                w = np.conj(phase)
                u10, u11 = (-s * w)[:, None], (c * w)[:, None]
                cc, ss = c[:, None], s[:, None]
                cp, cq = a[:, :, p].copy(), a[:, :, q].copy()
                a[:, :, p] = cc * cp + u10 * cq
                a[:, :, q] = ss * cp + u11 * cq
                rp, rq = a[:, p, :].copy(), a[:, q, :].copy()
                a[:, p, :] = cc * rp + np.conj(u10) * rq
                a[:, q, :] = ss * rp + np.conj(u11) * rq
                vp, vq = v[:, :, p].copy(), v[:, :, q].copy()
                v[:, :, p] = cc * vp + u10 * vq
                v[:, :, q] = ss * vp + u11 * vq
                a[:, p, q] = 0.0
                a[:, q, p] = 0.0
    else:
        if np.any(offdiag() > target):
            raise JacobiConvergenceError(f"batched Jacobi did not converge in {max_sweeps} sweeps")
    return np.real(np.diagonal(a, axis1=1, axis2=2)).copy(), v


def eigensolve_batch(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted energies (n, d) and phase-fixed eigenvector columns (n, d, d) for a stack."""
    h = np.asarray(h)
    asym = np.max(np.abs(h - np.conj(np.swapaxes(h, -1, -2))), axis=(1, 2)) if h.size else np.zeros(0)
    bad = asym > 1e-9 * np.maximum(1.0, np.linalg.norm(h, axis=(1, 2)))
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise NotHermitianError(f"matrix {k} is not Hermitian: max |H - H^dagger| = {asym[k]:.3e}")
    vals, vecs = jacobi_eigh_batch(h)
    order = np.argsort(vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1)
    vecs = np.take_along_axis(vecs, order[:, None, :], axis=2)
    mags = np.abs(vecs)
    lead = np.argmax(mags >= mags.max(axis=1, keepdims=True) * (1 - 1e-9), axis=1)  # (n, d)
    leadval = np.take_along_axis(vecs, lead[:, None, :], axis=1)
    vecs = vecs * (np.abs(leadval) / leadval)
    return vals, vecs
