import csv
import json
import shutil
import subprocess

import pytest

from dqc1lab import experiments
from dqc1lab.cli import main


def read_rows(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


def run_cli(tmp_path, command, config, seed=0):
    cfg = tmp_path / f"{command}.json"
    cfg.write_text(json.dumps(config))
    out = tmp_path / command
    return main([command, "--config", str(cfg), "--seed", str(seed), "--out", str(out)]), out


def test_gradcheck_quick(tmp_path, capsys):
    code, out = run_cli(tmp_path, "gradcheck", {"n": 2, "L": 1, "circuits": 3, "commuting_circuits": 2})
    assert code == 0
    rows = read_rows(out / "gradcheck.csv")
    assert rows and max(float(r["abs_error"]) for r in rows) <= 1e-6
    assert "PASS" in capsys.readouterr().out
    rec = json.loads((out / "record.json").read_text())
    assert rec["seed"] == 0 and "gradcheck.csv" in rec["artifacts"]


def test_csv_carries_config_hash(tmp_path):
    _, out = run_cli(tmp_path, "gradcheck", {"n": 1, "L": 1, "circuits": 1, "commuting_circuits": 1})
    first = (out / "gradcheck.csv").read_text().splitlines()[0]
    rec = json.loads((out / "record.json").read_text())
    assert first == f"# config-hash: {rec['config_hash']}"


def test_spectrum_counts(tmp_path):
    code, out = run_cli(tmp_path, "spectrum", {"n": 2, "L": 3, "draws": 3})
    assert code == 0
    data = json.loads((out / "spectrum.json").read_text())
    assert len(data["frequencies"]) == 7
    code, out = run_cli(tmp_path, "spectrum", {"n": 2, "L": 2, "features": "generic", "draws": 2})
    assert code == 0
    assert len(json.loads((out / "spectrum.json").read_text())["frequencies"]) == 16


def test_concentration_rows(tmp_path):
    code, out = run_cli(tmp_path, "concentration", {"n_range": [1, 2, 3], "samples": 500, "band_from_n": 9})
    assert code == 0
    assert len(read_rows(out / "concentration.csv")) == 3


def test_fit_and_replay_are_bit_exact(tmp_path, capsys):
    code, out = run_cli(tmp_path, "fit", {"target": "g1", "n": 2, "L": 1, "seeds": 2, "iterations": 5,
                                          "mse_threshold": 1.0})
    assert code == 0
    assert len(read_rows(out / "fit.csv")) == 70
    code = main(["replay", str(out / "record.json"), "--out", str(tmp_path / "again")])
    assert code == 0
    assert "identical" in capsys.readouterr().out
    assert (out / "fit.csv").read_bytes() == (tmp_path / "again" / "fit.csv").read_bytes()


def test_compare_qnn_row_count(tmp_path):
    code, out = run_cli(tmp_path, "compare-qnn", {"seeds": 1, "iterations": 2, "mse_threshold": 10.0})
    assert code == 0
    rows = read_rows(out / "compare_qnn.csv")
    assert len(rows) == 12
    assert {r["model"] for r in rows} == {"dqc1", "qnn"}


def test_optsweep_table_shape(tmp_path):
    cfg = {"n": 2, "L": 1, "seeds": 1, "iterations": 2, "lr_grid": [0.01, 0.15]}
    _, out = run_cli(tmp_path, "optsweep", cfg)
    rows = read_rows(out / "optsweep.csv")
    assert len(rows) == 4 * 2 + 2 * 2


def test_classify_smoke_on_mnist_fixture(tmp_path):
    path = str(experiments.__file__).replace("experiments.py", "datasets/mnist_smoke.csv")
    cfg = {"dataset": "mnist-csv", "path": path, "seeds": 1, "epochs": 1, "batch_size": 8,
           "thresholds": {"dqc1_test": 0.0}}
    code, out = run_cli(tmp_path, "classify", cfg)
    assert code == 0
    rows = read_rows(out / "accuracy.csv")
    assert {r["model"] for r in rows} == {"dqc1", "qnn"}


def test_missing_mnist_names_schema(tmp_path, capsys):
    code, _ = run_cli(tmp_path, "classify", {"dataset": "mnist-csv", "path": str(tmp_path / "none.csv")})
    assert code == 2
    assert "pixel0" in capsys.readouterr().err


def test_invalid_config_exits_2(tmp_path, capsys):
    code, _ = run_cli(tmp_path, "gradcheck", {"n": 0})
    assert code == 2
    code, _ = run_cli(tmp_path, "fit", {"target": "g7"})
    assert code == 2
    code, _ = run_cli(tmp_path, "gradcheck", {"bogus": 1})
    assert code == 2
    assert "invalid config" in capsys.readouterr().err


def test_failed_assertion_exits_1(tmp_path):
    code, _ = run_cli(tmp_path, "fit", {"target": "g1", "n": 4, "L": 1, "seeds": 1, "iterations": 1,
                                        "mse_threshold": 1e-12})
    assert code == 1


def test_schema_command(capsys):
    assert main(["schema", "fit"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert schema["properties"]["lr"]["default"] == 0.15


def test_config_hash_and_seed_derivation():
    a = experiments.config_hash("fit", experiments.resolve_config("fit", {}), 0)
    b = experiments.config_hash("fit", experiments.resolve_config("fit", {"lr": 0.15}), 0)
    c = experiments.config_hash("fit", experiments.resolve_config("fit", {}), 1)
    assert a == b != c and len(a) == 16
    assert experiments.derive_seed(0, 1) != experiments.derive_seed(0, 2)
    assert experiments.derive_seed(4, 2) == experiments.derive_seed(4, 2)


def test_worker_count_respects_env(monkeypatch):
    monkeypatch.setenv("DQC1LAB_THREADS", "1")
    assert experiments.worker_count(10) == 1


@pytest.mark.skipif(shutil.which("dqc1lab") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["dqc1lab", "schema", "spectrum"], capture_output=True, text=True)
    assert res.returncode == 0 and "features" in res.stdout
