"""Hahn-echo data pipeline: beat-spectrum peak areas and T2 from the area decay.

The echo area is modelled as I0 exp(-4 tau / T2). T2 comes from a weighted
straight-line fit of ln(area) against tau, with a Student-t 95% interval on
the slope mapped through T2 = -4 / slope.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize, stats

ZERO_PAD = 4
DETECTION_FACTOR = 3.0
LM_MAX_ITER = 200
LM_TOL = 1e-10


class NoDecayError(ValueError):
    """The fitted log-area slope is not negative."""


class PeakFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class BeatTrace:
    samples: np.ndarray
    sample_rate: float
    tau: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1 or len(s) < 64:
            raise ValueError(f"a beat trace needs at least 64 samples, got {s.size}")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", s)


@dataclass(frozen=True)
class EchoDataset:
    tau: np.ndarray
    area: np.ndarray
    area_err: np.ndarray | None = None

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        area = np.asarray(self.area, dtype=float)
        if tau.shape != area.shape or tau.ndim != 1:
            raise ValueError("tau and area must be 1-d arrays of equal length")
        if np.any(np.diff(tau) <= 0):
            raise ValueError("tau values must be strictly increasing")
        if not np.all(np.isfinite(area)):
            raise ValueError("echo areas must be finite")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "area", area)
        if self.area_err is not None:
            err = np.asarray(self.area_err, dtype=float)
            if err.shape != area.shape or np.any(err < 0) or not np.all(np.isfinite(err)):
                raise ValueError("area_err must be finite, nonnegative and match area")
            object.__setattr__(self, "area_err", err)

    @property
    def points(self) -> list[tuple[float, float, float]]:
        err = self.area_err if self.area_err is not None else np.zeros_like(self.area)
        return list(zip(self.tau.tolist(), self.area.tolist(), err.tolist()))

    def scaled_time(self, factor: float) -> "EchoDataset":
        return EchoDataset(self.tau * factor, self.area, self.area_err)


@dataclass(frozen=True)
class PeakArea:
    area: float
    area_error: float
    center: float
    width: float
    amplitude: float
    baseline: float
    detected: bool = True


@dataclass(frozen=True)
class T2Estimate:
    t2: float
    t2_ci95: tuple[float, float]
    i0: float
    residual_rms: float
    slope: float
    slope_ci95: tuple[float, float]
    n_points: int
    excluded: int = 0
    t2_nonlinear: float | None = None

    def as_dict(self) -> dict:
        return {
            "t2_s": self.t2,
            "t2_ci95_s": [self.t2_ci95[0], self.t2_ci95[1] if math.isfinite(self.t2_ci95[1]) else None],
            "i0": self.i0,
            "residual_rms": self.residual_rms,
            "slope_per_s": self.slope,
            "slope_ci95_per_s": list(self.slope_ci95),
            "n_points": self.n_points,
            "excluded_points": self.excluded,
            "t2_nonlinear_s": self.t2_nonlinear,
        }


def magnitude_spectrum(trace: BeatTrace) -> tuple[np.ndarray, np.ndarray]:
    """Zero-padded one-sided amplitude spectrum of the mean-removed trace."""
    x = trace.samples - trace.samples.mean()
    n = len(x)
    nfft = ZERO_PAD * n
    spec = np.abs(np.fft.rfft(x, n=nfft)) * 2.0 / n
    freqs = np.fft.rfftfreq(nfft, d=1.0 / trace.sample_rate)
    return freqs, spec


def _gauss(p, f):
    a, f0, sigma, c = p
    return c + a * np.exp(-0.5 * ((f - f0) / sigma) ** 2)


def _gauss_jac(p, f):
    a, f0, sigma, _ = p
    e = np.exp(-0.5 * ((f - f0) / sigma) ** 2)
    return np.column_stack([e, a * e * (f - f0) / sigma**2, a * e * (f - f0) ** 2 / sigma**3, np.ones_like(f)])


def _initial_guess(f, y):
    k = int(np.argmax(y))
    base = float(np.min(y))
    half = base + (y[k] - base) / 2
    lo = k
    while lo > 0 and y[lo - 1] > half:
        lo -= 1
    hi = k
    while hi < len(y) - 1 and y[hi + 1] > half:
        hi += 1
    df = f[1] - f[0]
    fwhm = max((hi - lo + 1) * df, 2 * df)
    return np.array([y[k] - base, f[k], fwhm / (2 * math.sqrt(2 * math.log(2))), base])


def spectrum_peak_area(trace: BeatTrace, window: tuple[float, float]) -> PeakArea:
    """Area of the beat peak inside ``window`` (Hz) from a Gaussian fit of the spectrum."""
    f_lo, f_hi = (float(w) for w in window)
    nyquist = trace.sample_rate / 2
    if not (0 <= f_lo < f_hi < nyquist):
        raise ValueError(f"window {window} must satisfy 0 <= f_lo < f_hi < {nyquist}")
    freqs, spec = magnitude_spectrum(trace)
    # rms noise magnitude from the median; Rayleigh-distributed bins give rms = median / sqrt(ln 2)
    noise = float(np.median(spec[1:])) / math.sqrt(math.log(2))
    sel = (freqs >= f_lo) & (freqs <= f_hi)
    f, y = freqs[sel], spec[sel]
    if len(f) < 5:
        raise ValueError("window holds fewer than 5 spectral points")
    if y.max() <= DETECTION_FACTOR * noise:
        return PeakArea(0.0, 0.0, float("nan"), float("nan"), 0.0, noise, detected=False)

    p0 = _initial_guess(f, y)
    res = optimize.least_squares(
        lambda p: _gauss(p, f) - y,
        p0,
        jac=lambda p: _gauss_jac(p, f),
        method="lm",
        ftol=LM_TOL,
        xtol=LM_TOL,
        max_nfev=LM_MAX_ITER,
    )
    if res.status <= 0:
        raise PeakFitError(f"Gaussian peak fit did not converge: {res.message}")
    a, f0, sigma, c = res.x
    sigma = abs(sigma)
    area = a * sigma * math.sqrt(2 * math.pi)

    dof = max(len(f) - 4, 1)
    s2 = float(res.fun @ res.fun) / dof
    jtj = res.jac.T @ res.jac
    cov = np.linalg.pinv(jtj) * s2
    grad = np.array([sigma, 0.0, a, 0.0]) * math.sqrt(2 * math.pi)
    area_err = math.sqrt(max(float(grad @ cov @ grad), 0.0))
    return PeakArea(float(area), area_err, float(f0), float(sigma), float(a), float(c))


def fit_decay(data: EchoDataset, nonlinear_check: bool = False) -> T2Estimate:
    """T2 from a weighted linear fit of ln(area) versus tau."""
    keep = data.area > 0
    excluded = int((~keep).sum())
    if excluded:
        warnings.warn(f"{excluded} point(s) with non-positive area excluded from the decay fit", stacklevel=2)
    tau, area = data.tau[keep], data.area[keep]
    n = len(tau)
    if n < 3:
        raise ValueError(f"need at least 3 points with positive area, got {n}")

    y = np.log(area)
    if data.area_err is not None and np.all(data.area_err[keep] > 0):
        sigma_ln = data.area_err[keep] / area
        w = 1.0 / sigma_ln**2
    else:
        w = np.ones(n)
    X = np.column_stack([np.ones(n), tau])
    xtw = X.T * w
    normal = xtw @ X
    intercept, slope = np.linalg.solve(normal, xtw @ y)
    resid = y - (intercept + slope * tau)
    s2 = float(w @ resid**2) / (n - 2)
    cov = np.linalg.inv(normal) * s2
    se = math.sqrt(max(cov[1, 1], 0.0))
    if slope >= 0:
        raise NoDecayError(f"log-area slope is {slope:.4g} (not negative): no measurable decay")

    tcrit = float(stats.t.ppf(0.975, n - 2))
    s_lo, s_hi = slope - tcrit * se, slope + tcrit * se
    t2 = -4.0 / slope
    t2_low = -4.0 / s_lo
    t2_high = -4.0 / s_hi if s_hi < 0 else math.inf

    t2_nl = None
    if nonlinear_check:
        sig = data.area_err[keep] if data.area_err is not None and np.all(data.area_err[keep] > 0) else None
        popt, _ = optimize.curve_fit(
            lambda t, i0, tt: i0 * np.exp(-4.0 * t / tt), tau, area, p0=(math.exp(intercept), t2), sigma=sig
        )
        t2_nl = float(popt[1])

    return T2Estimate(
        t2=float(t2),
        t2_ci95=(float(t2_low), float(t2_high)),
        i0=float(math.exp(intercept)),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        slope=float(slope),
        slope_ci95=(float(s_lo), float(s_hi)),
        n_points=n,
        excluded=excluded,
        t2_nonlinear=t2_nl,
    )


def read_dataset(path) -> EchoDataset:
    """Read ``tau_s,area[,area_err]`` CSV; lines starting with '#' are skipped."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["tau_s", "area"] or (len(header) > 2 and header[2] != "area_err"):
        raise ValueError(f"{path}: expected header 'tau_s,area[,area_err]', got {','.join(header)}")
    body = np.array([[float(v) for v in r] for r in rows[1:]])
    err = body[:, 2] if body.shape[1] > 2 else None
    return EchoDataset(body[:, 0], body[:, 1], err)


def write_dataset(data: EchoDataset, path, header_lines=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        cols = ["tau_s", "area"] + (["area_err"] if data.area_err is not None else [])
        w.writerow(cols)
        for tau, area, err in data.points:
            row = [repr(tau), repr(area)] + ([repr(err)] if data.area_err is not None else [])
            w.writerow(row)


def read_trace(path) -> BeatTrace:
    """Read a ``sample_index,amplitude`` CSV with ``# sample_rate_hz=`` (and optional ``# tau_s=``) headers."""
    meta = {}
    values = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line.lstrip("# ").partition("=")
            meta[key.strip()] = val.strip()
            continue
        if line.startswith("sample_index"):
            continue
        _, amp = line.split(",")
        values.append(float(amp))
    if "sample_rate_hz" not in meta:
        raise ValueError(f"{path}: missing '# sample_rate_hz=<value>' header")
    return BeatTrace(np.array(values), float(meta["sample_rate_hz"]), float(meta.get("tau_s", 0.0)))


def dataset_from_traces(traces: list[BeatTrace], window) -> EchoDataset:
    """Echo areas for a set of traces, sorted by tau; undetected echoes get area 0."""
    rows = sorted(((tr.tau, spectrum_peak_area(tr, window)) for tr in traces), key=lambda r: r[0])
    return EchoDataset(
        np.array([r[0] for r in rows]),
        np.array([r[1].area for r in rows]),
        np.array([r[1].area_error for r in rows]),
    )
