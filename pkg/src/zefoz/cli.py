"""Command-line entry point: ``zefoz {levels,map,zefoz,predict,fit,subsites}``.

Machine-readable results go to stdout (or --out); human summaries go to stderr.
Exit codes: 0 success, 1 usage error, 2 data or convergence error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config, ConfigError, parse_config
from .decoherence import (
    NOISE_MODES,
    NoiseVector,
    combine_t2,
    inhomogeneity_dephasing,
    predict_t2,
    t1_ceiling,
)
from .echo import NoDecayError, PeakFitError, dataset_from_traces, fit_decay, read_dataset, read_trace
from .eigen import JacobiConvergenceError
from .hamiltonian import (
    DegenerateLevelsError,
    TransitionId,
    label_zero_field_states,
    solve,
    subsite_counterpart,
    transition_frequency,
    transition_moments,
)
from .search import GridSpec, angular_gradient_map, minimize_gradient_direction, zero_field_report
from .sensitivity import DEFAULT_STEP, LevelTrackingError, first_order_sensitivity, transition_sensitivity
from .spin_core import spherical_field

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        # let "-2,2,0.5" and "-1e-3,0,0" through as values rather than flags
        self._negative_number_matcher = re.compile(r"^-\.?\d[\d.,eE+-]*$")

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fmt(x) -> str:
    """Shortest round-trip float text; deterministic across runs."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _triple(text: str, name: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"{name} expects three comma-separated numbers, got {text!r}") from None
    if len(vals) != 3 or not all(math.isfinite(v) for v in vals):
        raise UsageError(f"{name} expects three finite comma-separated numbers, got {text!r}")
    return vals


def _field_from_args(args) -> np.ndarray:
    if getattr(args, "field", None) and getattr(args, "polar", None):
        raise UsageError("give either --field or --polar, not both")
    if getattr(args, "polar", None):
        mag, th, ph = _triple(args.polar, "--polar")
        return spherical_field(mag, th, ph)
    if getattr(args, "field", None):
        return np.array(_triple(args.field, "--field"))
    return np.zeros(3)


def _threads() -> int:
    raw = os.environ.get("ZEFOZ_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"ZEFOZ_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"ZEFOZ_THREADS must be a positive integer, got {raw!r}")
    return n


def _meta_lines(cfg: Config | None, command: str, **decisions) -> list[str]:
    lines = [f"tool=zefoz version={__version__} command={command}"]
    if cfg is not None:
        lines.append(f"config_sha256={cfg.sha256}")
    for k in sorted(decisions):
        lines.append(f"{k}={decisions[k]}")
    return lines


def _csv_text(meta: list[str], header: list[str], rows) -> str:
    buf = io.StringIO()
    for line in meta:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if not isinstance(v, str) else v for v in r])
    return buf.getvalue()


def _json_text(meta: list[str], payload: dict) -> str:
    doc = {"metadata": meta, **payload}
    return json.dumps(doc, indent=2, sort_keys=False, allow_nan=False, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _clean(x):
    """JSON-safe float: non-finite values become None."""
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _system(cfg: Config, name: str):
    if name not in cfg.systems:
        raise UsageError(f"system {name!r} not in config (have: {', '.join(cfg.systems)})")
    return cfg.systems[name]


def _transition(cfg: Config, name: str):
    if name not in cfg.transitions:
        raise UsageError(f"transition {name!r} not in config (have: {', '.join(cfg.transitions) or 'none'})")
    return cfg.transition(name)


def _noise(cfg: Config, args) -> NoiseVector:
    n = cfg.noise
    mag = args.noise_ut * 1e-6 if getattr(args, "noise_ut", None) is not None else n.magnitude
    mode = args.mode or n.mode
    direction = n.direction
    if getattr(args, "direction", None):
        direction = _triple(args.direction, "--direction")
    if mode == "fixed-direction" and direction is None:
        raise UsageError("fixed-direction mode needs --direction or a configured noise direction")
    return NoiseVector(mag, mode, direction if mode == "fixed-direction" else None)


# subcommands


def cmd_levels(args) -> int:
    cfg = parse_config(args.config)
    sysm = _system(cfg, args.system)
    b = _field_from_args(args)
    sol = solve(sysm, b)
    labels = {}
    if sysm.dim == 4:
        try:
            labels = {v: k for k, v in label_zero_field_states(sysm).items()}
        except (DegenerateLevelsError, ValueError):
            labels = {}
    bac = np.array(_triple(args.bac, "--bac")) if args.bac else None
    transitions = []
    for i in range(sol.dim):
        for j in range(i + 1, sol.dim):
            t = TransitionId(i, j)
            row = {"lower": i, "upper": j, "nu_mhz": float(transition_frequency(sol, t))}
            if bac is not None:
                _, rabi = transition_moments(sol, sysm, t, bac)
                row["rabi_mhz"] = rabi
            transitions.append(row)
    payload = {
        "system": args.system,
        "field_t": b.tolist(),
        "levels": [
            {"index": k, "energy_mhz": float(e), "zero_field_label": labels.get(k)} for k, e in enumerate(sol.energies)
        ],
        "transitions": transitions,
    }
    if bac is not None:
        payload["bac_t"] = bac.tolist()
    _emit(args, _json_text(_meta_lines(cfg, "levels"), payload))
    _say(f"levels: {sol.dim} levels for {args.system} at B = {b.tolist()} T")
    return EXIT_OK


def _grid_from_args(cfg: Config, args) -> GridSpec:
    th = _triple(args.theta, "--theta") if args.theta else cfg.map_grid.theta
    ph = _triple(args.phi, "--phi") if args.phi else cfg.map_grid.phi
    for name, (lo, hi, step) in (("--theta", th), ("--phi", ph)):
        if not step > 0:
            raise UsageError(f"{name} step must be positive")
        if hi < lo:
            raise UsageError(f"{name} range max is below min")
    return GridSpec(th, ph)


def cmd_map(args) -> int:
    cfg = parse_config(args.config)
    sysm, t = _transition(cfg, args.transition)
    bmag = args.bmag if args.bmag is not None else cfg.map_magnitude
    grid = _grid_from_args(cfg, args)
    noise = _noise(cfg, args) if args.with_t2 else None
    m = angular_gradient_map(sysm, bmag, grid, t, noise=noise, workers=_threads())
    meta = _meta_lines(
        cfg,
        "map",
        transition=f"{args.transition}({t})",
        bmag_t=_fmt(bmag),
        theta_deg=",".join(_fmt(v) for v in grid.theta),
        phi_deg=",".join(_fmt(v) for v in grid.phi),
        gradient_route="hellmann-feynman",
        noise=f"{noise.mode}:{_fmt(noise.magnitude)}T" if noise else "none",
    )
    rows = ((th, ph, g, lg, t2) for th, ph, g, lg, t2 in m.rows())
    _emit(args, _csv_text(meta, ["theta_deg", "phi_deg", "grad_mhz_per_t", "log10_grad", "t2_pred_s"], rows))
    th, ph, g = m.argmin()
    _say(f"map: {m.values.size} cells, min |S1| = {g:.4g} MHz/T at theta={th}, phi={ph}; "
         f"span {m.orders_of_magnitude():.2f} decades; {int((~m.valid).sum())} invalid cells")
    return EXIT_OK


def cmd_zefoz(args) -> int:
    cfg = parse_config(args.config)
    ground = _system(cfg, args.ground)
    excited = _system(cfg, args.excited) if args.excited else None
    rep = zero_field_report(ground, excited, cfg.optical_offset or 0.0)
    payload = {
        "zero_field": {
            "anisotropic": rep.anisotropic,
            "anisotropy_note": rep.anisotropy_note,
            "all_pass": rep.all_pass,
            "threshold_mhz_per_t": 1e-3,
            "transitions": [
                {
                    "transition": r.transition,
                    "nu_mhz": r.nu,
                    "grad_mhz_per_t": r.gradient,
                    "curv_norm_mhz_per_t2": _clean(r.curvature),
                    "pass": r.passed,
                    "note": r.note,
                }
                for r in rep.rows
            ],
        }
    }
    decisions = {}
    if args.optimize:
        sysm, t = _transition(cfg, args.transition)
        bmag = args.bmag if args.bmag is not None else cfg.map_magnitude
        start = _triple(args.start + ",0", "--start")[:2] if args.start else (0.0, -45.0)
        noise = _noise(cfg, args)
        try:
            opt = minimize_gradient_direction(sysm, bmag, start, t, noise=noise, domain=cfg.map_grid)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        payload["optimum"] = {
            "transition": args.transition,
            "bmag_t": bmag,
            "theta_deg": opt.theta,
            "phi_deg": opt.phi,
            "grad_mhz_per_t": opt.gradient,
            "t2_pred_s": opt.t2,
            "iterations": opt.iterations,
            "converged": opt.converged,
            "refined_on_local_grid": opt.refined,
            "warning": opt.warning,
            "trace": [list(p) for p in opt.trace],
        }
        decisions["noise"] = f"{noise.mode}:{_fmt(noise.magnitude)}T"
        if opt.warning:
            _say(f"zefoz: warning: {opt.warning}")
    _emit(args, _json_text(_meta_lines(cfg, "zefoz", **decisions), payload))
    _say(f"zefoz: {sum(r.passed for r in rep.rows)}/{len(rep.rows)} transitions pass at B = 0; {rep.anisotropy_note}")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = parse_config(args.config)
    b = _field_from_args(args)
    noise = _noise(cfg, args)
    names = args.transition or list(cfg.transitions)
    if not names:
        raise UsageError("no transitions configured; add a 'transitions' block or pass --transition")
    spread = args.spread if args.spread is not None else cfg.inhomogeneity_spread
    seed = args.seed if args.seed is not None else cfg.seed("inhomogeneity")
    rows = []
    for name in names:
        sysm, t = _transition(cfg, name)
        ts = transition_sensitivity(sysm, b, t)
        p = predict_t2(ts, noise)
        base = [name, ts.nu, ts.gradient_norm, ts.curvature_max, noise.magnitude * 1e6]
        rows.append(base + [noise.mode, p.t2, "1" if p.infinite else "0"])
        if spread > 0:
            inh = inhomogeneity_dephasing(sysm, b, spread, t, samples=cfg.inhomogeneity_samples, seed=seed)
            combined = combine_t2(p.t2, inh.t2_star)
            rows.append(base + [f"{noise.mode}+inhomogeneity", combined, "1" if combined is None else "0"])
            if inh.discarded:
                _say(f"predict: {name}: {inh.discarded} degenerate samples discarded")
        if cfg.t1 is not None and p.t2 is not None:
            check = t1_ceiling(p.t2, cfg.t1)
            if not check.passed:
                _say(f"predict: {name}: predicted T2 {p.t2:.4g} s exceeds 2 T1 = {2 * cfg.t1:.4g} s")
    meta = _meta_lines(
        cfg,
        "predict",
        field_t=",".join(_fmt(v) for v in b),
        noise_mode=noise.mode,
        noise_t=_fmt(noise.magnitude),
        gradient_route="hellmann-feynman",
        curvature_route="perturbation-sum",
        inhomogeneity=(
            f"gaussian-per-component spread={_fmt(spread)} samples={cfg.inhomogeneity_samples}" if spread > 0 else "none"
        ),
        seed=seed,
    )
    header = ["transition", "nu_mhz", "grad_mhz_per_t", "curv_max_mhz_per_t2", "noise_ut", "mode", "t2_s", "infinite_flag"]
    _emit(args, _csv_text(meta, header, rows))
    for r in rows:
        _say(f"predict: {r[0]} [{r[5]}] T2 = {'infinite' if r[6] is None else f'{r[6] * 1e3:.4g} ms'}")
    return EXIT_OK


def cmd_fit(args) -> int:
    if bool(args.data) == bool(args.traces):
        raise UsageError("give exactly one of --data or --traces")
    if args.traces:
        if not args.window:
            raise UsageError("--traces needs --window f_lo,f_hi (Hz)")
        try:
            lo_hi = tuple(float(v) for v in args.window.split(","))
        except ValueError:
            raise UsageError(f"--window expects two comma-separated frequencies, got {args.window!r}") from None
        if len(lo_hi) != 2:
            raise UsageError("--window expects two comma-separated frequencies")
        data = dataset_from_traces([read_trace(p) for p in args.traces], lo_hi)
        source = "traces"
    else:
        data = read_dataset(args.data)
        source = "dataset"
    est = fit_decay(data, nonlinear_check=args.nonlinear_check)
    meta = _meta_lines(
        None,
        "fit",
        source=source,
        model="log-linear I0*exp(-4*tau/T2)",
        ci="student-t 95% n-2 dof",
        peak_area="fitted gaussian a*sigma*sqrt(2pi)" if args.traces else "as given",
    )
    payload = {k: (_clean(v) if isinstance(v, float) else v) for k, v in est.as_dict().items()}
    payload["t2_ci95_s"] = [_clean(v) for v in est.t2_ci95]
    payload["slope_ci95_per_s"] = [_clean(v) for v in est.slope_ci95]
    _emit(args, _json_text(meta, payload))
    hi = est.t2_ci95[1]
    _say(f"fit: T2 = {est.t2 * 1e3:.4g} ms, 95% CI [{est.t2_ci95[0] * 1e3:.4g}, "
         f"{'inf' if math.isinf(hi) else f'{hi * 1e3:.4g}'}] ms from {est.n_points} points")
    return EXIT_OK


def cmd_subsites(args) -> int:
    cfg = parse_config(args.config)
    sysm = _system(cfg, args.system)
    partner = subsite_counterpart(sysm)
    lo, hi, step = _triple(args.scan, "--scan")
    if not step > 0 or hi < lo:
        raise UsageError("--scan expects min,max,step with step > 0 and max >= min")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    values = lo + step * np.arange(n)
    fixed_mag, fixed_th, fixed_ph = _triple(args.polar, "--polar") if args.polar else (cfg.map_magnitude, 0.0, -90.0)
    rows = []
    for v in values:
        mag, th, ph = fixed_mag, fixed_th, fixed_ph
        if args.vary == "bmag":
            mag = v
        elif args.vary == "theta":
            th = v
        else:
            ph = v
        b = spherical_field(mag, th, ph)
        s1, s2 = solve(sysm, b), solve(partner, b)
        for i in range(s1.dim):
            for j in range(i + 1, s1.dim):
                t = TransitionId(i, j)
                n1, n2 = transition_frequency(s1, t), transition_frequency(s2, t)
                rows.append([float(v), b[0], b[1], b[2], str(t), n1, n2, n2 - n1])
    meta = _meta_lines(cfg, "subsites", system=args.system, vary=args.vary, partner="pi rotation about b")
    header = ["scan_value", "bx_t", "by_t", "bz_t", "transition", "nu_site1_mhz", "nu_site2_mhz", "delta_mhz"]
    _emit(args, _csv_text(meta, header, rows))
    worst = max(abs(r[-1]) for r in rows)
    _say(f"subsites: {len(values)} scan points, max sub-site splitting {worst:.4g} MHz")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="zefoz", description="Zero-field and low-field clock transitions of S = 1/2 hyperfine systems.")
    p.add_argument("--version", action="version", version=f"zefoz {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="JSON configuration file")
        sp.add_argument("--out", help="write output here instead of stdout")

    def field_opts(sp):
        sp.add_argument("--field", help="Cartesian field Bx,By,Bz in tesla, (D1, D2, b) frame")
        sp.add_argument("--polar", help="field as magnitude_T,theta_deg,phi_deg")

    def noise_opts(sp):
        sp.add_argument("--noise-ut", type=float, help="noise magnitude in microtesla (overrides config)")
        sp.add_argument("--mode", choices=NOISE_MODES, help="noise model (overrides config)")
        sp.add_argument("--direction", help="noise direction x,y,z for fixed-direction mode")

    sp = sub.add_parser("levels", help="energies, labels and transition table at one field")
    common(sp)
    field_opts(sp)
    sp.add_argument("--system", default="ground")
    sp.add_argument("--bac", help="drive field Bx,By,Bz in tesla; adds a Rabi frequency column")
    sp.set_defaults(func=cmd_levels)

    sp = sub.add_parser("map", help="angular |S1| map at fixed |B| (CSV)")
    common(sp)
    sp.add_argument("--transition", default="psi")
    sp.add_argument("--bmag", type=float, help="field magnitude in tesla")
    sp.add_argument("--theta", help="theta window min,max,step in degrees")
    sp.add_argument("--phi", help="phi window min,max,step in degrees")
    sp.add_argument("--with-t2", action="store_true", help="fill the t2_pred_s column")
    noise_opts(sp)
    sp.set_defaults(func=cmd_map)

    sp = sub.add_parser("zefoz", help="zero-field report and optional direction optimisation (JSON)")
    common(sp)
    sp.add_argument("--ground", default="ground")
    sp.add_argument("--excited", help="excited-state system name; adds optical transitions")
    sp.add_argument("--optimize", action="store_true", help="minimise |S1| over field direction")
    sp.add_argument("--transition", default="psi")
    sp.add_argument("--bmag", type=float)
    sp.add_argument("--start", help="initial theta,phi in degrees")
    noise_opts(sp)
    sp.set_defaults(func=cmd_zefoz)

    sp = sub.add_parser("predict", help="T2 predictions from the noise model (CSV)")
    common(sp)
    field_opts(sp)
    sp.add_argument("--transition", action="append", help="transition name (repeatable; default all)")
    sp.add_argument("--spread", type=float, help="fractional field inhomogeneity (overrides config)")
    sp.add_argument("--seed", type=int, help="sampling seed (overrides config)")
    noise_opts(sp)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("fit", help="T2 from an echo-area dataset or beat traces (JSON)")
    common(sp, config=False)
    sp.add_argument("--data", help="CSV with tau_s,area[,area_err]")
    sp.add_argument("--traces", nargs="+", help="beat-trace CSV files, one per tau")
    sp.add_argument("--window", help="beat-peak window f_lo,f_hi in Hz (with --traces)")
    sp.add_argument("--nonlinear-check", action="store_true", help="also report a nonlinear exponential refit")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("subsites", help="paired spectra of the two magnetic sub-sites along a field scan (CSV)")
    common(sp)
    sp.add_argument("--system", default="ground")
    sp.add_argument("--vary", choices=("bmag", "theta", "phi"), default="bmag")
    sp.add_argument("--scan", required=True, help="min,max,step of the varied coordinate")
    sp.add_argument("--polar", help="fixed magnitude_T,theta_deg,phi_deg for the other coordinates")
    sp.set_defaults(func=cmd_subsites)
    return p


DATA_ERRORS = (
    ConfigError,
    DegenerateLevelsError,
    LevelTrackingError,
    JacobiConvergenceError,
    NoDecayError,
    PeakFitError,
    ValueError,
    KeyError,
    OSError,
)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        _say(f"usage error: {exc}")
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        module = type(exc).__module__.rsplit(".", 1)[-1]
        where = f"[{module}] " if module not in ("builtins",) else ""
        _say(f"error: {where}{exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
