import json
import os
import subprocess
import sys

import numpy as np
import pytest

from resolvent_surface.cli import main
from resolvent_surface.io import RunConfig, read_csv


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_model_validate(tmp_path, capsys):
    code, out, _ = run(capsys, "model", "validate", "--kind", "quartic1d", "--out", str(tmp_path))
    assert code == 0
    summary = json.loads(out)
    doc = json.loads((tmp_path / "model_validate.json").read_text())
    assert doc["config_hash"] == summary["config_hash"]
    assert doc["schema_version"] == 1 and doc["seed"] == 0
    meta = json.loads((tmp_path / "model_validate.meta.json").read_text())
    assert meta["config_hash"] == summary["config_hash"]


def test_config_errors_exit_1(tmp_path, capsys):
    code, _, err = run(capsys, "model", "validate", "--kind", "nosuchmodel", "--out", str(tmp_path))
    assert code == 1 and err.startswith("config-error:")
    code, _, err = run(capsys, "shell", "sample", "--kind", "quartic1d", "--out", str(tmp_path))
    assert code == 1 and "energy" in err
    code, _, err = run(capsys, "model", "validate", "--kind", "quartic1d", "--tol", "rtol=-1",
                       "--out", str(tmp_path))
    assert code == 1 and "rtol" in err
    code, _, err = run(capsys, "nosuchgroup")
    assert code == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"model": {"kind": "quartic1d"}, "colour": 3}')
    code, _, err = run(capsys, "model", "validate", "--config", str(bad), "--out", str(tmp_path))
    assert code == 1 and "colour" in err


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"kind": "quartic1d"}, "seed": 4,
                               "params": {"energy": 1.0, "n": 16}}))
    code, out, _ = run(capsys, "shell", "sample", "--config", str(cfg), "--out", str(tmp_path),
                       "--stem", "a")
    assert code == 0
    meta, header, data = read_csv(tmp_path / "a.csv")
    assert len(data) == 16 and meta["seed"] == "4"
    code, out, _ = run(capsys, "shell", "sample", "--config", str(cfg), "--n", "8",
                       "--energy", "2.0", "--out", str(tmp_path), "--stem", "b")
    assert code == 0
    _, header, data = read_csv(tmp_path / "b.csv")
    assert len(data) == 8
    assert np.allclose(0.5 * data[:, 1] ** 2 + 0.25 * data[:, 0] ** 4, 2.0, atol=1e-8)


def test_outputs_are_reproducible(tmp_path, capsys):
    args = ["sc", "weyl", "--kind", "quartic1d", "--centre", "0.3,0.2", "--time", "1.2"]
    run(capsys, *args, "--out", str(tmp_path / "a"))
    run(capsys, *args, "--out", str(tmp_path / "b"))
    for name in os.listdir(tmp_path / "a"):
        if name.endswith(".meta.json"):
            continue
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_hash_tracks_configuration():
    from resolvent_surface import HamiltonianModel
    m = HamiltonianModel("quartic1d")
    a = RunConfig("x", m, {"energy": 1.0})
    assert a.hash == RunConfig("x", m, {"energy": 1.0}).hash
    assert a.hash != RunConfig("x", m, {"energy": 1.5}).hash
    assert a.hash != RunConfig("x", m, {"energy": 1.0}, seed=1).hash


def test_env_output_directory(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("RESOLVENT_SURFACE_OUT", str(tmp_path / "env"))
    code, out, _ = run(capsys, "model", "validate", "--kind", "ho2d")
    assert code == 0
    assert (tmp_path / "env" / "model_validate.json").exists()


def test_nonconvergence_exit_2(tmp_path, capsys):
    code, _, err = run(capsys, "exact", "spectrum", "--kind", "quartic1d", "--n-basis", "20",
                       "--n-levels", "19", "--out", str(tmp_path))
    assert code == 2 and err.startswith("nonconvergence:")


def test_orbit_find_nonconvergence(tmp_path, capsys):
    code, _, err = run(capsys, "orbit", "find", "--kind", "coupledquartic2d", "--energy", "1",
                       "--guess", "0.35,0.1", "--out", str(tmp_path),
                       "--tol", "max_steps=5")
    assert code == 2 and err.startswith("nonconvergence:")


def test_compare_trace_one_dof(tmp_path, capsys):
    code, out, _ = run(capsys, "compare", "trace", "--kind", "harmonic1d", "--e-min", "1",
                       "--e-max", "6", "--n-energy", "200", "--gamma", "0.1",
                       "--out", str(tmp_path))
    assert code == 0
    meta, header, data = read_csv(tmp_path / "compare_trace.csv")
    assert header == ["E", "d_osc_sc", "d_osc_exact", "diff"]
    assert np.allclose(data[:, 3], data[:, 1] - data[:, 2])
    rep = json.loads((tmp_path / "compare_trace_report.json").read_text())
    assert rep["correlation"] > 0.99
    assert max(p["relative_error"] for p in rep["peaks"]) < 1e-6


def test_leaf_needs_no_model(tmp_path, capsys):
    code, out, _ = run(capsys, "leaf", "--omega1", "1", "--omega2", "1.5", "--out", str(tmp_path))
    assert code == 0


def test_console_script_and_numpy_fallback(tmp_path):
    env = dict(os.environ, RESOLVENT_SURFACE_NUMBA="0")
    cmd = [sys.executable, "-m", "resolvent_surface.cli", "caustic", "scan", "--kind", "quartic1d",
           "--energy", "1", "--resolution", "12", "--out", str(tmp_path / "np")]
    r = subprocess.run(cmd, env=env, capture_output=True, text=True, timeout=300)
    assert r.returncode == 0, r.stderr
    env["RESOLVENT_SURFACE_NUMBA"] = "1"
    cmd[-1] = str(tmp_path / "nb")
    r2 = subprocess.run(cmd, env=env, capture_output=True, text=True, timeout=300)
    assert r2.returncode == 0, r2.stderr
    a = (tmp_path / "np" / "caustic_scan.csv").read_bytes()
    b = (tmp_path / "nb" / "caustic_scan.csv").read_bytes()
    assert a == b


@pytest.mark.slow
def test_secondary_orbit_nonconvergence_reports_history(tmp_path, capsys):
    common = ["--kind", "coupledquartic2d", "--out", str(tmp_path)]
    code, _, _ = run(capsys, "orbit", "db", "--energy", "1", "--max-crossings", "1",
                     "--grid", "21", *common)
    assert code == 0
    db = str(tmp_path / "orbit_db.json")
    code, _, err = run(capsys, "orbit", "secondary", "--db", db, "--orbit", "p20",
                       "--windings", "4", "--max-iter", "2", *common)
    assert code == 2 and "residual_history=[" in err
    hist = json.loads(err.split("residual_history=")[1])
    assert len(hist) >= 1
    code, _, err = run(capsys, "orbit", "secondary", "--db", db, "--orbit", "p20",
                       "--kind", "quartic1d", "--out", str(tmp_path))
    assert code == 1
