import json
import subprocess
import sys

import numpy as np
import pytest

from fedadmm.cli import main
from fedadmm.config import RunConfig
from fedadmm.data import GenSpec, generate_linreg, load_dataset
from fedadmm.harness import run_experiment
from fedadmm.trace import strip_wall_time

SMALL = {"n": 5, "m": 10, "d_min": 10, "d_max": 20, "k0": 5, "seed": 3, "max_iters": 3000}


@pytest.fixture
def config_file(tmp_path, monkeypatch):
    monkeypatch.delenv("FEDADMM_OUTPUT_DIR", raising=False)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(dict(SMALL, output_dir=str(tmp_path / "out"))))
    return path


def test_run_writes_outputs_and_exits_zero(config_file, tmp_path, capsys):
    assert main(["run", "--config", str(config_file)]) == 0
    summary = json.loads((tmp_path / "out" / "fedadmm_summary.json").read_text())
    assert summary["status"] == "stopped_by_gradient"
    assert summary["seed"] == 3 and summary["config"]["k0"] == 5
    assert (tmp_path / "out" / "fedadmm_trace.csv").exists()
    assert "stopped_by_gradient" in capsys.readouterr().out


def test_iteration_cap_exit_code(config_file):
    assert main(["run", "--config", str(config_file), "--max-iters", "0"]) == 2


def test_bad_key_exit_code_names_key(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"k0": 5, "stepsize": 0.1}))
    assert main(["run", "--config", str(path)]) == 1
    assert "stepsize" in capsys.readouterr().err
    assert main(["run", "--set", "rho=7"]) == 1
    assert "rho" in capsys.readouterr().err


def test_flags_override_file(config_file, tmp_path):
    out = tmp_path / "flagged"
    assert main(["run", "--config", str(config_file), "--out", str(out), "--seed", "8",
                 "--set", "k0=2"]) == 0
    summary = json.loads((out / "fedadmm_summary.json").read_text())
    assert summary["seed"] == 8 and summary["config"]["k0"] == 2


def test_environment_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("FEDADMM_OUTPUT_DIR", str(tmp_path / "env"))
    overrides = [f"--set={k}={v}" for k, v in SMALL.items()]
    assert main(["run", *overrides]) == 0
    assert (tmp_path / "env" / "fedadmm_summary.json").exists()


def test_run_is_byte_stable_apart_from_wall_time(config_file, tmp_path):
    texts = []
    for name in ("a", "b"):
        main(["run", "--config", str(config_file), "--out", str(tmp_path / name)])
        texts.append(strip_wall_time((tmp_path / name / "fedadmm_trace.csv").read_text()))
    assert texts[0] == texts[1]


def test_baseline_run_exit_code(config_file, tmp_path):
    code = main(["run", "--config", str(config_file), "--algorithm", "fedavg", "--out", str(tmp_path / "b")])
    summary = json.loads((tmp_path / "b" / "fedavg_summary.json").read_text())
    assert code == (0 if summary["status"] == "stopped_by_gap" else 2)


def test_generate_round_trip(tmp_path, monkeypatch):
    monkeypatch.delenv("FEDADMM_OUTPUT_DIR", raising=False)
    args = ["generate", "--set", "m=4", "--set", "n=3", "--seed", "6"]
    assert main(args + ["--out", str(tmp_path / "g1")]) == 0
    assert main(args + ["--out", str(tmp_path / "g2")]) == 0
    for name in ("manifest.json", "shards.npz"):
        assert (tmp_path / "g1" / name).read_bytes() == (tmp_path / "g2" / name).read_bytes()
    manifest = json.loads((tmp_path / "g1" / "manifest.json").read_text())
    assert manifest["seed"] == 6 and manifest["d"] == sum(manifest["d_i"])
    loaded = load_dataset(tmp_path / "g1")
    fresh = generate_linreg(GenSpec(m=4, n=3, seed=6))
    for a, b in zip(loaded.shards, fresh.shards):
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)


def test_generated_shards_feed_a_run(tmp_path, monkeypatch):
    monkeypatch.delenv("FEDADMM_OUTPUT_DIR", raising=False)
    main(["generate", "--set", "m=10", "--set", "n=5", "--seed", "3", "--out", str(tmp_path / "g")])
    code = main(["run", "--set", "dataset=shards", "--set", f"data_path={tmp_path / 'g'}", "--seed", "3",
                 "--set", "m=10", "--set", "n=5", "--out", str(tmp_path / "r")])
    direct = run_experiment(RunConfig(m=10, n=5, seed=3)).summary
    summary = json.loads((tmp_path / "r" / "fedadmm_summary.json").read_text())
    assert code == 0 and summary["cr"] == direct["cr"] and summary["f"] == direct["f"]


def test_libsvm_run(tmp_path, monkeypatch):
    monkeypatch.delenv("FEDADMM_OUTPUT_DIR", raising=False)
    rng = np.random.default_rng(0)
    lines = []
    for _ in range(60):
        x = rng.standard_normal(4)
        label = 1 if x[0] + 0.5 * x[1] > 0 else -1
        lines.append(f"{label} " + " ".join(f"{j + 1}:{v:.6f}" for j, v in enumerate(x)))
    path = tmp_path / "toy.svm"
    path.write_text("\n".join(lines) + "\n")
    code = main(["run", "--set", "dataset=libsvm", "--set", f"data_path={path}", "--set", "model=logreg",
                 "--set", "m=5", "--set", "k0=2", "--set", "max_iters=20000", "--out", str(tmp_path / "o")])
    summary = json.loads((tmp_path / "o" / "fedadmm_summary.json").read_text())
    assert code == 0 and summary["status"] == "stopped_by_gradient"


def test_generate_rejects_file_datasets(tmp_path):
    assert main(["generate", "--set", "dataset=libsvm", "--set", "data_path=x", "--set", "model=logreg",
                 "--out", str(tmp_path)]) == 1


def test_sweep_and_report(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("FEDADMM_OUTPUT_DIR", raising=False)
    cfg = dict(SMALL, grid_k0=[1, 5], instances=2, algorithms=["fedadmm"], output_dir=str(tmp_path / "s"))
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(cfg))
    assert main(["sweep", "--config", str(path), "--workers", "1"]) == 0
    csv_path = tmp_path / "s" / "sweep_summary.csv"
    rows = json.loads((tmp_path / "s" / "sweep_summary.json").read_text())
    assert [r["k0"] for r in rows] == [1, 5]
    capsys.readouterr()
    assert main(["report", str(csv_path)]) == 0
    table = capsys.readouterr().out
    assert "median_cr" in table and len(table.strip().splitlines()) == 4


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fedadmm", "run", "--set", "bogus=1"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 1 and "bogus" in proc.stderr
