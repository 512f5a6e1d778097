import csv
import io
import json
import math

import numpy as np
import pytest

from conftest import EXAMPLE_CONFIG
from zefoz.cli import main
from zefoz.decoherence import synthesize_echo
from zefoz.echo import write_dataset

CFG = str(EXAMPLE_CONFIG)
SMALL = ["--theta", "-2,2,1", "--phi", "-10,0,5"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def csv_rows(text):
    body = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(body))))


def meta(text):
    return [line[2:] for line in text.splitlines() if line.startswith("# ")]


def test_levels_zero_field(capsys):
    code, out, err = run(capsys, "levels", "--config", CFG)
    assert code == 0 and "levels:" in err
    doc = json.loads(out)
    assert doc["metadata"][0].startswith("tool=zefoz")
    labels = [lv["zero_field_label"] for lv in doc["levels"]]
    assert sorted(labels) == ["phi+", "phi-", "psi+", "psi-"]
    nus = sorted(t["nu_mhz"] for t in doc["transitions"])
    assert any(math.isclose(n, 655.0) for n in nus) and any(math.isclose(n, 528.0) for n in nus)


def test_levels_with_drive(capsys):
    code, out, _ = run(capsys, "levels", "--config", CFG, "--polar", "0.005,0,0", "--bac", "0,0,3e-5")
    assert code == 0
    assert all("rabi_mhz" in t for t in json.loads(out)["transitions"])


def test_map_csv(capsys):
    code, out, err = run(capsys, "map", "--config", CFG, *SMALL, "--with-t2")
    assert code == 0
    rows = csv_rows(out)
    assert len(rows) == 5 * 3
    assert list(rows[0]) == ["theta_deg", "phi_deg", "grad_mhz_per_t", "log10_grad", "t2_pred_s"]
    assert (rows[0]["theta_deg"], rows[0]["phi_deg"]) == ("-2.0", "-10.0")
    assert all(float(r["t2_pred_s"]) > 0 for r in rows)
    m = meta(out)
    assert any(line.startswith("config_sha256=") for line in m)
    assert "noise=isotropic-average:3e-06T" in m


def test_map_without_t2_leaves_column_empty(capsys):
    code, out, _ = run(capsys, "map", "--config", CFG, *SMALL)
    rows = csv_rows(out)
    assert code == 0 and len(rows) == 15
    assert all(r["t2_pred_s"] == "" for r in rows)


def test_map_threads_do_not_change_bytes(capsys, monkeypatch):
    _, a, _ = run(capsys, "map", "--config", CFG, *SMALL)
    assert len(csv_rows(a)) == 15
    monkeypatch.setenv("ZEFOZ_THREADS", "3")
    _, b, _ = run(capsys, "map", "--config", CFG, *SMALL)
    assert a == b
    monkeypatch.setenv("ZEFOZ_THREADS", "zero")
    assert run(capsys, "map", "--config", CFG, *SMALL)[0] == 1


def test_zefoz_report_and_optimizer(capsys):
    code, out, err = run(capsys, "zefoz", "--config", CFG, "--excited", "excited", "--optimize", "--start", "1.5,-2")
    assert code == 0
    doc = json.loads(out)
    zf = doc["zero_field"]
    assert zf["all_pass"] and zf["anisotropic"] and len(zf["transitions"]) == 22
    opt = doc["optimum"]
    assert opt["converged"] and abs(opt["theta_deg"]) < 0.1 and abs(opt["phi_deg"]) < 0.1
    assert opt["grad_mhz_per_t"] < 10.0


def test_zefoz_start_outside_domain_is_usage_error(capsys):
    code, _, err = run(capsys, "zefoz", "--config", CFG, "--optimize", "--start", "45,-45")
    assert code == 1 and "outside" in err


def test_predict(capsys):
    code, out, _ = run(capsys, "predict", "--config", CFG, "--polar", "0.005,0,0", "--transition", "psi")
    assert code == 0
    rows = csv_rows(out)
    assert [r["mode"] for r in rows] == ["isotropic-average", "isotropic-average+inhomogeneity"]
    homog, combined = (float(r["t2_s"]) for r in rows)
    assert 5e-3 < homog < 15e-3 and combined < homog
    assert "seed=20180730" in meta(out)


def test_predict_zero_noise_infinite_flag(capsys):
    code, out, _ = run(capsys, "predict", "--config", CFG, "--noise-ut", "0", "--spread", "0")
    assert code == 0
    for r in csv_rows(out):
        assert r["infinite_flag"] == "1" and r["t2_s"] == ""


def test_predict_fixed_direction_requires_direction(capsys):
    assert run(capsys, "predict", "--config", CFG, "--mode", "fixed-direction")[0] == 1
    code, _, _ = run(capsys, "predict", "--config", CFG, "--mode", "fixed-direction", "--direction", "0,0,1")
    assert code == 0


def test_fit_dataset(capsys, tmp_path):
    p = tmp_path / "d.csv"
    write_dataset(synthesize_echo(4e-3, 1.0, np.linspace(0, 8e-3, 9)), p)
    code, out, err = run(capsys, "fit", "--data", str(p), "--nonlinear-check")
    assert code == 0
    doc = json.loads(out)
    assert math.isclose(doc["t2_s"], 4e-3, rel_tol=1e-9)
    assert "fit: T2" in err


def test_fit_growth_is_data_error(capsys, tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("tau_s,area\n0,1\n1e-3,2\n2e-3,3\n")
    code, _, err = run(capsys, "fit", "--data", str(p))
    assert code == 2 and err.startswith("error: [echo]")


def test_fit_argument_errors(capsys, tmp_path):
    assert run(capsys, "fit")[0] == 1
    assert run(capsys, "fit", "--traces", "a.csv")[0] == 1
    assert run(capsys, "fit", "--traces", "a.csv", "--window", "x,y")[0] == 1


def test_subsites(capsys):
    code, out, _ = run(capsys, "subsites", "--config", CFG, "--vary", "theta", "--scan", "0,90,45", "--polar", "0.005,0,30")
    assert code == 0
    rows = csv_rows(out)
    assert len(rows) == 3 * 6
    # theta = 0 lies in the D1-D2 plane and theta = 90 along b; both keep the sub-sites together
    for r in rows:
        if float(r["scan_value"]) in (0.0, 90.0):
            assert abs(float(r["delta_mhz"])) < 1e-6


def test_out_file_matches_stdout(capsys, tmp_path):
    _, out, _ = run(capsys, "predict", "--config", CFG, "--polar", "0.002,1,-40")
    dest = tmp_path / "p.csv"
    assert run(capsys, "predict", "--config", CFG, "--polar", "0.002,1,-40", "--out", str(dest))[0] == 0
    assert dest.read_text() == out


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["levels"],
        ["levels", "--config", CFG, "--field", "1,2"],
        ["levels", "--config", CFG, "--field", "0,0,0", "--polar", "0,0,0"],
        ["map", "--config", CFG, "--transition", "nope"],
        ["map", "--config", CFG, "--theta", "2,-2,1"],
        ["subsites", "--config", CFG, "--scan", "0,1,0"],
        ["bogus"],
    ],
)
def test_usage_errors_exit_1(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == 1 and out == "" and err.startswith("usage error:")


def test_bad_config_exit_2(capsys, tmp_path):
    p = tmp_path / "empty.json"
    p.write_text("")
    code, _, err = run(capsys, "levels", "--config", str(p))
    assert code == 2 and "[config]" in err and "byte offset 0" in err
    code, _, err = run(capsys, "levels", "--config", str(tmp_path / "missing.json"))
    assert code == 2
