import json
import subprocess
import sys

import pytest

from avgsgd.cli import apply_overrides, main

TOY = {
    "data": {"generate": {"kind": "TwoPointToy"}},
    "model": {"family": "logistic", "radius": 1.0},
    "run": {"horizon": 50, "seed": 1, "record_stride": 10},
    "replicate": {"m": 200},
    "sweep": {"horizons": [10, 100], "m": 1000},
    "rates": {"horizons": [10, 100, 1000, 10000], "m": 20},
    "selfconcordance": {"segments": 5, "probes": 9},
}

SMALL = {
    "data": {"generate": {"kind": "WellSpecifiedLogistic", "dimension": 3, "dataset_size": 40,
                          "seed": 2, "theta_scale": 0.3}},
    "model": {"family": "logistic", "radius": 1.0},
    "run": {"horizon": 40},
}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_sweep_on_toy(tmp_path):
    out = tmp_path / "o"
    assert main(["sweep", "--config", write(tmp_path, TOY), "--out", str(out), "--strict"]) == 0
    lines = [l for l in (out / "reports.csv").read_text().splitlines() if not l.startswith("#")]
    assert len(lines) > 1 and all(",False," in l for l in lines[1:])
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["files"]) == {"reports.csv", "reports.json"}
    assert manifest["config"]["model"]["radius"] == 1.0


def test_missing_radius(tmp_path, capsys):
    cfg = json.loads(json.dumps(TOY))
    del cfg["model"]["radius"]
    assert main(["solve", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    assert "radius" in capsys.readouterr().err


def test_radius_too_small_for_data(tmp_path, capsys):
    cfg = json.loads(json.dumps(TOY))
    cfg["model"] = {"family": "log_cosh", "radius": 1.0}
    assert main(["solve", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    assert "radius" in capsys.readouterr().err


def test_unreadable_paths(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 2
    cfg = {"data": {"path": "missing.libsvm"}, "model": {"family": "logistic", "radius": 1.0}}
    assert main(["run", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2


def test_run_is_byte_identical(tmp_path):
    c = write(tmp_path, SMALL)
    assert main(["run", "--config", c, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", c, "--out", str(tmp_path / "b")]) == 0
    for name in ("trajectory.csv", "run.json", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    head = (tmp_path / "a" / "trajectory.csv").read_text().splitlines()
    assert head[1].startswith("# config=") and head[2].startswith("# config_sha256=")


def test_gen_data_then_solve_from_file(tmp_path):
    assert main(["gen-data", "--config", write(tmp_path, SMALL), "--out", str(tmp_path / "g")]) == 0
    cfg = {"data": {"path": "g/data.libsvm"}, "model": {"family": "logistic", "radius": 1.0}}
    assert main(["solve", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "s")]) == 0
    cert = json.loads((tmp_path / "s" / "certificate.json").read_text())["certificate"]
    assert cert["converged"]


def test_strict_violation_exit(tmp_path):
    c = write(tmp_path, TOY)
    args = ["rates", "--config", c, "--out", str(tmp_path / "r"), "--set", "rates.expected_slope=[5, 6]"]
    assert main(args) == 0
    assert main(args + ["--strict"]) == 3
    fit = json.loads((tmp_path / "r" / "rate_fit.json").read_text())
    assert fit["within_expected"] is False


def test_other_commands(tmp_path):
    c = write(tmp_path, TOY)
    assert main(["replicate", "--config", c, "--out", str(tmp_path / "rep"), "--threads", "2"]) == 0
    assert main(["check-selfconcordance", "--config", c, "--out", str(tmp_path / "sc"), "--strict"]) == 0
    assert main(["kernel-run", "--config", c, "--out", str(tmp_path / "k"), "--seed", "4"]) == 0
    state = json.loads((tmp_path / "k" / "dual_state.json").read_text())
    assert len(state["alphas"]) == 50
    manifest = json.loads((tmp_path / "k" / "manifest.json").read_text())
    assert manifest["config"]["run"]["seed"] == 4


def test_schema_errors(tmp_path, capsys):
    bad = json.loads(json.dumps(TOY))
    bad["run"]["horizon"] = 0
    assert main(["run", "--config", write(tmp_path, bad), "--out", str(tmp_path / "o")]) == 2
    assert "run.horizon" in capsys.readouterr().err
    assert main(["run", "--config", write(tmp_path, TOY), "--out", str(tmp_path / "o"),
                 "--set", "model.family=hinge"]) == 2


def test_overrides():
    cfg = apply_overrides({"a": {"b": 1}}, ["a.b=2", "a.c=text", "d.e=[1, 2]"])
    assert cfg == {"a": {"b": 2, "c": "text"}, "d": {"e": [1, 2]}}


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "avgsgd", "solve", "--config", write(tmp_path, TOY),
                          "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "mu = 0.25" in res.stdout
