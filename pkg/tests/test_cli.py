import json
import subprocess
import sys

import numpy as np
import pytest

from ddcoupling.cli import ConfigError, config_to_argv, main, parse_config


def _run(tmp_path, *args):
    return main([*args, "--seed", "3", "--out", str(tmp_path)])


def test_analyze_writes_report(tmp_path, capsys):
    code = _run(tmp_path, "analyze", "--model", "sirs", "--horizon", "5", "--K-list", "100")
    assert code == 0
    rep = json.loads((tmp_path / "analyze.json").read_text())
    np.testing.assert_allclose(rep["x_star"], [0.5, 0.25], atol=1e-12)
    assert rep["stable"] and rep["lyapunov_residual"] < 1e-10
    flow = (tmp_path / "flow.csv").read_text().splitlines()
    assert flow[0] == "t,x_1,x_2"
    meta = json.loads((tmp_path / "analyze.json.meta.json").read_text())
    assert meta["seed"] == 3 and meta["config"]["model"] == "sirs"


def test_missing_seed_and_many_problems(capsys):
    code = main(["analyze", "--threads", "0", "--bogus"])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config"
    joined = " ".join(err["problems"])
    assert "seed" in joined and "threads" in joined and "--bogus" in joined and "model" in joined


def test_bad_types(capsys):
    assert main(["analyze", "--model", "logistic", "--seed", "x"]) == 1
    assert main(["analyze", "--model", "logistic", "--seed", "1", "--dt", "nan"]) == 1
    assert main([]) == 1


def test_model_errors_exit_one(tmp_path, capsys):
    code = _run(tmp_path, "analyze", "--model", "logistic", "--p", "0.5")
    assert code == 1
    assert json.loads(capsys.readouterr().err)["error"] == "ModelError"


def test_runtime_error_exit_two(tmp_path, capsys):
    # an initial guess on the boundary of a custom model whose equilibrium sits on it
    spec = {"custom": {"d": 1, "jumps": [[-1]], "rates": [{"coeffs": [{"exps": [1], "c": 1.0}]}]},
            "domain": {"lo": [0.0], "hi": [1.0]}}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(spec))
    code = _run(tmp_path, "analyze", "--model-file", str(path), "--guess", "0.5")
    assert code == 2


def test_config_file_round_trip(tmp_path):
    cfg = parse_config(["simulate", "--model", "logistic", "--seed", "7", "--scale", "100", "--x0", "0.5",
                        "--horizon", "2", "--p", "3"])
    again = parse_config(config_to_argv(cfg))
    assert again == cfg
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    from_file = parse_config(["simulate", "--config", str(path)])
    assert from_file == cfg
    over = parse_config(["simulate", "--config", str(path), "--scale", "200"])
    assert over.scale == 200 and over.overrides == ["scale"]


def test_config_file_problems(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 1, "nonsense": 2, "command": "couple"}))
    with pytest.raises(ConfigError) as info:
        parse_config(["analyze", "--config", str(path), "--model", "logistic"])
    msg = " ".join(info.value.problems)
    assert "nonsense" in msg and "couple" in msg


def test_override_recorded_in_metadata(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"command": "analyze", "model": "logistic", "seed": 1, "out": str(tmp_path)}))
    assert main(["analyze", "--config", str(path), "--seed", "2"]) == 0
    meta = json.loads((tmp_path / "analyze.json.meta.json").read_text())
    assert meta["overridden_by_flags"] == ["seed"] and meta["seed"] == 2


def test_simulate_outputs_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["simulate", "--model", "logistic", "--scale", "100", "--x0", "0.5", "--horizon", "2",
            "--replicas", "2", "--eps", "0.2", "--emit", "summary", "path", "gap", "--seed", "11"]
    assert main([*args, "--out", str(a)]) == 0
    assert main([*args, "--out", str(b)]) == 0
    for name in ("summary.csv", "path_0.csv", "gap_1.csv", "simulate_summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    header = (a / "path_0.csv").read_text().splitlines()[0]
    assert header == "t,X_1,Z_1,gap"
    summary = json.loads((a / "simulate_summary.json").read_text())
    assert summary["replicas"] == 2 and 0 <= summary["fraction_below_eps"] <= 1


def test_json_format(tmp_path):
    assert main(["couple", "--horizon", "16", "--replicas", "5", "--seed", "1", "--out", str(tmp_path),
                 "--format", "json"]) == 0
    doc = json.loads((tmp_path / "couple_errors.json").read_text())
    assert doc["columns"] == ["replica", "T", "error"] and len(doc["rows"]) == 5


def test_check_failure_exit_three(tmp_path, capsys):
    # eps far too small for K = 100 fails the built-in check
    code = main(["simulate", "--model", "logistic", "--scale", "100", "--x0", "0.5", "--horizon", "1",
                 "--eps", "0.001", "--check", "--seed", "1", "--out", str(tmp_path)])
    assert code == 3


def test_experiment_variants_small(tmp_path):
    base = ["--seed", "5", "--out", str(tmp_path)]
    assert main(["experiment", "moddev", "--scale", "50", "--eta", "0.3", "--replicas", "10", *base]) == 0
    assert main(["experiment", "qsd", "--K-list", "20", "30", "--t", "5", "--replicas", "30", *base]) == 0
    assert main(["experiment", "sirs-cost", "--scale", "100", "--T", "2", "--replicas", "5", *base]) == 0
    assert main(["experiment", "threshold", "--K-list", "50", "100", "--replicas", "2", "--max-horizon", "2",
                 *base]) == 0
    for name in ("moddev.csv", "qsd.csv", "sirs_cost.csv", "threshold.csv", "sirs_cost_summary.json"):
        assert (tmp_path / name).exists()
    oracle = json.loads((tmp_path / "sirs_cost_summary.json").read_text())["sigma_oracle"]
    assert oracle["agree"]


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "ddcoupling.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "ddcoupling" in out.stdout
    out = subprocess.run([sys.executable, "-m", "ddcoupling.cli", "experiment", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "moddev" in out.stdout


def test_analyze_logistic_values(tmp_path):
    assert _run(tmp_path, "analyze", "--model", "logistic", "--horizon", "2", "--K-list", "100") == 0
    rep = json.loads((tmp_path / "analyze.json").read_text())
    assert rep["x_star"] == pytest.approx([1.0], abs=1e-12)
    assert np.asarray(rep["Sigma_star"]).ravel() == pytest.approx([2.0], abs=1e-10)
