import json
import os

import numpy as np
import pytest

from wolfflab import cli


def _write(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def dirac_measure(tmp_path):
    return _write(tmp_path, "measure.json",
                  {"atoms": [{"x": [0.0, 0.0], "mass": 1.0}], "sign": "nonnegative"})


def _read_csv(path):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    assert lines[0].startswith("# wolfflab")
    header = lines[1].split(",")
    rows = [ln.split(",") for ln in lines[2:]]
    return header, rows, lines[1:]


def test_potential_experiment_matches_closed_form(tmp_path, dirac_measure):
    cfg = {
        "experiment": "potential",
        "params": {"n": 2, "s": 0.5, "p": 2.0},
        "measure": "measure.json",
        "potential": {"kind": "wolff", "T": 1.0, "tol": 1e-10,
                      "points": [[0.5, 0.0], [0.25, 0.0]]},
        "seed": 0,
    }
    path = _write(tmp_path, "cfg.json", cfg)
    out = tmp_path / "out"
    assert cli.run("potential", path, out_dir=str(out)) == 0
    header, rows, _ = _read_csv(out / "potential.csv")
    assert header == ["x0", "x1", "kind", "T", "value"]
    vals = {float(r[0]): float(r[4]) for r in rows}
    assert vals[0.5] == pytest.approx(1.0, rel=1e-8)
    assert vals[0.25] == pytest.approx(3.0, rel=1e-8)  # (1/d - 1/T) at d = 1/4
    assert (out / "potential.png").exists()
    report = json.loads((out / "report.json").read_text())
    assert report["version"]
    assert report["config"]["params"]["s"] == 0.5


def test_malformed_config_exits_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    rc = cli.run("potential", str(bad))
    assert rc == 2
    err = capsys.readouterr().err
    assert json.loads(err.strip())["error"]


def test_validation_error_reports_field(tmp_path, capsys, dirac_measure):
    cfg = {"experiment": "potential", "params": {"n": 2, "s": 5.0, "p": 2.0},
           "measure": "measure.json", "potential": {"points": [[0.5, 0.0]]}}
    path = _write(tmp_path, "cfg.json", cfg)
    assert cli.run("potential", path, out_dir=str(tmp_path / "o")) == 2
    payload = json.loads(capsys.readouterr().err.strip())
    assert payload["field"] == "params"


def test_experiment_mismatch_rejected(tmp_path, capsys, dirac_measure):
    cfg = {"experiment": "solve", "params": {"n": 2, "s": 0.5, "p": 2.0},
           "measure": "measure.json"}
    path = _write(tmp_path, "cfg.json", cfg)
    assert cli.run("potential", path, out_dir=str(tmp_path / "o")) == 2


def test_solve_experiment_and_artifacts(tmp_path):
    measure = _write(tmp_path, "m.json",
                     {"atoms": [{"x": [0.5, 0.5], "mass": 1.0}]})
    cfg = {
        "experiment": "solve",
        "params": {"n": 2, "s": 0.5, "p": 2.0},
        "measure": "m.json",
        "lattice": {"origin": [0, 0], "extent": [1, 1], "h": 0.125,
                    "collar": 2, "trunc_factor": 3.0},
        "solve": {"tol": 1e-9},
        "seed": 1,
    }
    path = _write(tmp_path, "cfg.json", cfg)
    out = tmp_path / "out"
    assert cli.run("solve", path, out_dir=str(out)) == 0
    header, rows, _ = _read_csv(out / "solution.csv")
    assert header == ["node", "x0", "x1", "value"]
    vals = np.array([float(r[3]) for r in rows])
    assert np.all(vals >= -1e-12)
    assert vals.max() > 0
    assert (out / "solution.png").exists()
    assert (out / "energy_trace.png").exists()
    rep = json.loads((out / "report.json").read_text())
    assert rep["converged"]


def test_csv_body_deterministic(tmp_path, dirac_measure):
    cfg = {
        "experiment": "potential",
        "params": {"n": 2, "s": 0.5, "p": 2.0},
        "measure": "measure.json",
        "potential": {"kind": "riesz", "s_order": 1.0, "T": 2.0,
                      "grid": {"origin": [0.1, 0.1], "extent": [0.5, 0.5], "num": 4}},
        "seed": 3,
    }
    path = _write(tmp_path, "cfg.json", cfg)
    bodies = []
    for k in range(2):
        out = tmp_path / f"out{k}"
        assert cli.run("potential", path, out_dir=str(out), figures=False) == 0
        _, _, body = _read_csv(out / "potential.csv")
        bodies.append(body)
    assert bodies[0] == bodies[1]


def test_capacity_experiment(tmp_path):
    cfg = {
        "experiment": "capacity",
        "params": {"n": 2, "s": 0.5, "p": 1.5},
        "lattice": {"origin": [-1, -1], "extent": [2, 2], "h": 0.125,
                    "collar": 2, "trunc_factor": 4.0},
        "capacity": {"kernel": "riesz", "q": 2.0, "tol": 1e-3,
                     "sets": {"balls": [{"x": [0, 0], "r": 0.25},
                                        {"x": [0, 0], "r": 0.5}]}},
        "seed": 0,
    }
    path = _write(tmp_path, "cfg.json", cfg)
    out = tmp_path / "out"
    assert cli.run("capacity", path, out_dir=str(out)) == 0
    rep = json.loads((out / "report.json").read_text())
    caps = [row["capacity"] for row in rep["rows"]]
    assert caps[0] < caps[1]
    assert (out / "capacity_scaling.png").exists()


def test_experiment_list_with_jobs(tmp_path, dirac_measure):
    sub = {
        "experiment": "potential",
        "params": {"n": 2, "s": 0.5, "p": 2.0},
        "measure": "measure.json",
        "potential": {"kind": "wolff", "T": 1.0, "points": [[0.5, 0.0]]},
    }
    cfg = {"experiments": [sub, dict(sub)]}
    path = _write(tmp_path, "cfg.json", cfg)
    out = tmp_path / "batch"
    assert cli.run("potential", path, out_dir=str(out), jobs=2, figures=False) == 0
    assert (out / "sub_000_potential" / "potential.csv").exists()
    assert (out / "sub_001_potential" / "potential.csv").exists()


def test_env_var_output_dir(tmp_path, dirac_measure, monkeypatch):
    cfg = {
        "experiment": "potential",
        "params": {"n": 2, "s": 0.5, "p": 2.0},
        "measure": "measure.json",
        "potential": {"kind": "wolff", "T": 1.0, "points": [[0.5, 0.0]]},
    }
    path = _write(tmp_path, "cfg.json", cfg)
    target = tmp_path / "env_out"
    monkeypatch.setenv("WOLFFLAB_OUT", str(target))
    assert cli.run("potential", path, figures=False) == 0
    assert (target / "potential.csv").exists()


def test_verify_experiment(tmp_path):
    measure = _write(tmp_path, "m.json", {"atoms": [{"x": [0.5, 0.5], "mass": 1.0}]})
    cfg = {
        "experiment": "verify",
        "params": {"n": 2, "s": 0.5, "p": 2.0},
        "measure": "m.json",
        "lattice": {"origin": [0, 0], "extent": [1, 1], "h": 0.125,
                    "collar": 2, "trunc_factor": 3.0},
        "verify": {"tol": 1e-9},
    }
    path = _write(tmp_path, "cfg.json", cfg)
    out = tmp_path / "out"
    assert cli.run("verify", path, out_dir=str(out)) == 0
    header, rows, _ = _read_csv(out / "verify.csv")
    assert header == ["node", "x0", "x1", "u", "w_lower", "w_upper"]
    rep = json.loads((out / "report.json").read_text())
    assert "c0_emp" in rep and "dini" in rep
    assert (out / "verify_bands.png").exists()


def test_sola_experiment(tmp_path):
    measure = _write(tmp_path, "m.json", {"atoms": [{"x": [0.5, 0.5], "mass": 1.0}]})
    cfg = {
        "experiment": "sola",
        "params": {"n": 2, "s": 0.7, "p": 2.0},
        "measure": "m.json",
        "lattice": {"origin": [0, 0], "extent": [1, 1], "h": 0.125,
                    "collar": 2, "trunc_factor": 3.0},
        "sola": {"schedule": [2, 4], "tol": 1e-8},
    }
    path = _write(tmp_path, "cfg.json", cfg)
    out = tmp_path / "out"
    assert cli.run("sola", path, out_dir=str(out)) == 0
    rep = json.loads((out / "report.json").read_text())
    assert len(rep["distances"]) == 1
    assert (out / "stages.csv").exists()
    assert (out / "sola_distances.png").exists()


def test_lane_emden_experiment(tmp_path):
    measure = _write(tmp_path, "m.json", {"atoms": [{"x": [0.53, 0.47], "mass": 0.5}]})
    cfg = {
        "experiment": "lane-emden",
        "params": {"n": 2, "s": 0.75, "p": 2.0},
        "measure": "m.json",
        "lattice": {"origin": [0, 0], "extent": [1, 1], "h": 0.125,
                    "collar": 2, "trunc_factor": 3.0},
        "lane-emden": {"reaction": {"kind": "power", "gamma": 3.0},
                       "tol": 1e-8, "max_iters": 30},
    }
    path = _write(tmp_path, "cfg.json", cfg)
    out = tmp_path / "out"
    assert cli.run("lane-emden", path, out_dir=str(out)) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["converged"] and not rep["diverged"]
    assert (out / "solution.csv").exists()


def test_acceptance_experiment_subset(tmp_path, capsys):
    cfg = {"experiment": "acceptance", "acceptance": {"criteria": [1, 6]}}
    path = _write(tmp_path, "cfg.json", cfg)
    out = tmp_path / "out"
    assert cli.run("acceptance", path, out_dir=str(out)) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert any("criterion 1" in ln and ln.startswith("PASS") for ln in lines)
    rep = json.loads((out / "acceptance.json").read_text())
    assert rep["passed"] and len(rep["results"]) == 2


def test_main_argparse(tmp_path, dirac_measure):
    cfg = {
        "experiment": "potential",
        "params": {"n": 2, "s": 0.5, "p": 2.0},
        "measure": "measure.json",
        "potential": {"kind": "fracmax", "T": 1.0, "eta": 0.0,
                      "points": [[0.5, 0.0]]},
    }
    path = _write(tmp_path, "cfg.json", cfg)
    out = tmp_path / "cli_out"
    rc = cli.main(["potential", "--config", path, "--out", str(out), "--no-figures"])
    assert rc == 0
    header, rows, _ = _read_csv(out / "potential.csv")
    assert float(rows[0][4]) == pytest.approx(2.0)
