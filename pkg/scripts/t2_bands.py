"""Predicted T2 of each configured transition against noise amplitude, zero field and optimum.

Writes <out>/t2_bands.csv with one row per (location, transition, mode, noise amplitude).
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from zefoz.config import parse_config
from zefoz.decoherence import NOISE_MODES, NoiseVector, predict_t2
from zefoz.search import minimize_gradient_direction
from zefoz.sensitivity import transition_sensitivity
from zefoz.spin_core import spherical_field

ROOT = Path(__file__).resolve().parents[1]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=str(ROOT / "configs" / "yb171_yso_siteII.json"))
    p.add_argument("--noise-ut", default="0.3,1,3,10,30", help="comma-separated amplitudes in microtesla")
    p.add_argument("--out", default="results")
    args = p.parse_args()

    cfg = parse_config(args.config)
    amps = [float(v) * 1e-6 for v in args.noise_ut.split(",")]
    modes = [m for m in NOISE_MODES if m != "fixed-direction"]
    rows = []
    for name in cfg.transitions:
        sysm, t = cfg.transition(name)
        opt = minimize_gradient_direction(sysm, cfg.map_magnitude, (1.5, -2.0), t, domain=cfg.map_grid)
        places = {"zero-field": np.zeros(3), "optimum": spherical_field(cfg.map_magnitude, opt.theta, opt.phi)}
        for where, b in places.items():
            ts = transition_sensitivity(sysm, b, t)
            for mode in modes:
                for a in amps:
                    pred = predict_t2(ts, NoiseVector(a, mode))
                    rows.append([where, name, mode, a * 1e6, ts.gradient_norm, pred.t2])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "t2_bands.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["location", "transition", "mode", "noise_ut", "grad_mhz_per_t", "t2_s"])
        w.writerows([r[:3] + [repr(float(v)) if v is not None else "" for v in r[3:]] for r in rows])
    for r in rows:
        if r[3] == 3.0:
            print(f"{r[0]:>10} {r[1]:>4} {r[2]:>17}  3 uT: T2 = {r[5] * 1e3:8.3f} ms")
    print(f"wrote {out / 't2_bands.csv'}")


if __name__ == "__main__":
    main()
