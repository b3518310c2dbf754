import json
import subprocess
import sys

import pytest

from zsmftg.cli import main
from zsmftg.config import preset, serialize_config

FAST = {"ZSMFTG_EXPERIMENT_N_SAMPLES": "4000", "ZSMFTG_EXPERIMENT_N_REPS": "40",
        "ZSMFTG_EXPERIMENT_AGENT_COUNTS": "[5, 50]", "ZSMFTG_ESTIMATOR_N_PERTURBATIONS": "3000",
        "ZSMFTG_TRAIN_ITERS": "30", "ZSMFTG_ESTIMATOR_HORIZON": "20"}


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_saddle(capsys):
    code, out, _ = run(capsys, "saddle", "--preset", "table1")
    doc = json.loads(out)
    assert code == 0
    assert doc["P"][0][0] == pytest.approx(0.4620, abs=1e-4)
    assert doc["Pbar"][0][0] == pytest.approx(1.344, abs=1e-3)
    assert set(doc["theta_star"]) == {"K1", "L1", "K2", "L2"}
    assert doc["flags"]["convex_concave"] is False
    assert doc["warnings"]


def test_verify_connection(capsys):
    code, out, _ = run(capsys, "verify-connection")
    doc = json.loads(out)
    residuals = [v for k, v in doc.items() if k.endswith("residual_y") or k.endswith("residual_z")]
    assert code == 0 and len(residuals) == 4
    assert max(residuals) <= 1e-8


def test_solve_riccati_and_conditions(capsys):
    code, out, _ = run(capsys, "solve-riccati")
    doc = json.loads(out)
    assert code == 0 and doc["P_residual"] < 1e-10 and "P_o" in doc
    code, out, _ = run(capsys, "check-conditions")
    doc = json.loads(out)
    assert doc["holds"] is False
    assert doc["details"]["DARE-1"]["solved"] is True


def test_train_writes_artifacts(tmp_path, capsys):
    code, out, _ = run(capsys, "train", "--method", "gda", "--mode", "exact", "--out", str(tmp_path))
    assert code == 0
    lines = (tmp_path / "iterates.csv").read_text().splitlines()
    assert len(lines) == 2001
    assert json.loads(out)["final_rel_error"] <= 1e-3
    assert (tmp_path / "convergence.svg").exists()
    assert (tmp_path / "train.json").read_text() == out


def test_train_replications(tmp_path, capsys, monkeypatch):
    for k, v in FAST.items():
        monkeypatch.setenv(k, v)
    code, out, _ = run(capsys, "train", "--mode", "sampled", "--replications", "2",
                       "--out", str(tmp_path))
    assert code == 0
    names = {p.name for p in tmp_path.iterdir()}
    assert {"iterates.csv", "iterates_rep0.csv", "iterates_rep1.csv",
            "iterates_mean_params.csv", "convergence.svg"} <= names


def test_simulate_and_estimate(tmp_path, capsys, monkeypatch):
    for k, v in FAST.items():
        monkeypatch.setenv(k, v)
    code, out, _ = run(capsys, "simulate", "--out", str(tmp_path))
    doc = json.loads(out)
    assert code == 0 and doc["mkv"]["n_samples"] == 4000
    assert [s["n_agents"] for s in doc["n_agent"]] == [5, 50]
    code, out, _ = run(capsys, "estimate-grad", "--crn")
    doc = json.loads(out)
    assert set(doc["players"]) == {"1", "2"}
    assert "smoothed_dL" in doc["players"]["1"]


def test_config_file_and_errors(tmp_path, capsys):
    good = tmp_path / "g.cfg"
    good.write_text(serialize_config(preset("table1")))
    assert run(capsys, "saddle", "--config", str(good))[0] == 0
    bad = tmp_path / "b.cfg"
    bad.write_text("[model]\nA = 0.4\n[train]\nlr = 3\n")
    code, _, err = run(capsys, "saddle", "--config", str(bad))
    assert code == 2
    assert "b.cfg:4" in err and "'lr'" in err


def test_module_error_exit_code(tmp_path, capsys):
    cfg = preset("table1")
    cfg.model["A"] = 0.0
    path = tmp_path / "s.cfg"
    path.write_text(serialize_config(cfg))
    code, _, err = run(capsys, "verify-connection", "--config", str(path))
    assert code == 1 and "AssumptionViolated" in err


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "zsmftg.cli", "saddle"], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["value"] > 0
