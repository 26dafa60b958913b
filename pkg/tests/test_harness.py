import json
import random
from pathlib import Path

import numpy as np
import pytest

from fedadmm import harness
from fedadmm.config import RunConfig, with_updates
from fedadmm.harness import (
    SweepSpec, build_dataset, instance_seed, lower_median, median_sweep, read_sweep_csv, render_table,
    run_experiment, write_run_outputs, write_sweep_outputs,
)
from fedadmm.model import global_loss_grad, uniform_weights
from fedadmm.stopping import StoppingConfig, baseline_stopping_met, cr_count, default_eps_tol, stopping_met
from fedadmm.trace import TraceRecord, read_trace_csv, strip_wall_time, trace_csv_text

GOLDEN = Path(__file__).parent / "golden" / "desk_fedadmm_summary.json"
DESK = RunConfig(n=20, m=20, rho=0.5, k0=10, seed=0)
TINY = RunConfig(n=5, m=10, d_min=10, d_max=20, rho=0.5, k0=5, seed=3, max_iters=3000)


# ---- stopping rules

def test_gradient_rule():
    cfg = StoppingConfig(eps_tol=1e-3, grad0_norm_sq=10.0)
    assert stopping_met(0.0, cfg, 100, 100, 10_000)
    assert cfg.threshold(100, 100, 10_000) == pytest.approx(5e-7, rel=1e-15)
    big = StoppingConfig(eps_tol=1e3, grad0_norm_sq=10.0)
    assert big.threshold(1, 1, 1) == 2.0
    assert not stopping_met(2.0, big, 1, 1, 1)
    with pytest.raises(ValueError):
        StoppingConfig(eps_tol=0.0)


def test_gap_rule():
    assert baseline_stopping_met(1.5, 1.5)
    assert not baseline_stopping_met(3e-4, 0.0)
    assert baseline_stopping_met(1.00039, 1.0)
    assert not baseline_stopping_met(-1.0 + 4.1e-4, -1.0)


def test_cr_count():
    assert [cr_count(0, 10), cr_count(20, 10), cr_count(25, 10)] == [0, 4, 5]
    assert default_eps_tol("linreg") == 1e-3 and default_eps_tol("logreg") == 1e-7


def test_lower_median():
    assert lower_median([7]) == 7
    assert lower_median([3, 1, 2]) == 2
    assert lower_median([4, 1, 3, 2]) == 2
    assert np.isnan(lower_median([]))


# ---- trace files

def test_trace_csv_round_trip(tmp_path):
    recs = [TraceRecord(1, 1, 2, 0.1 + 0.2, 1e-300, 3.25, 7, 1.5),
            TraceRecord(2, 1, 2, 1 / 3, 0.0, None, 0, 2.0, algorithm="fedavg")]
    path = tmp_path / "t.csv"
    path.write_text(trace_csv_text(recs))
    assert read_trace_csv(path) == recs
    header = path.read_text().splitlines()[0]
    assert header == "algorithm,k,tau,cr_cumulative,f_global,grad_norm_sq,lyapunov,inner_iters_total,wall_ms"
    assert "wall_ms" not in strip_wall_time(path.read_text())


# ---- single runs

def test_desk_run_matches_golden_summary():
    golden = json.loads(GOLDEN.read_text())
    summary = run_experiment(DESK).summary
    for key in ("algorithm", "status", "k", "cr", "seed"):
        assert summary[key] == golden[key]
    for key in ("f", "grad_norm_sq", "threshold"):
        assert summary[key] == pytest.approx(golden[key], rel=1e-9)
    np.testing.assert_allclose(summary["x_final"], golden["x_final"], rtol=1e-8, atol=1e-12)


def test_desk_trace_accounting(tmp_path):
    result = run_experiment(DESK)
    trace_path, summary_path = write_run_outputs(result, tmp_path)
    rows = read_trace_csv(trace_path)
    assert len(rows) == result.summary["k"]
    for rec in rows:
        if rec.k % DESK.k0 == 0:
            assert rec.cr_cumulative == cr_count(rec.k, DESK.k0)
    # f in the last row is f at the dumped global model
    data = build_dataset(DESK)
    summary = json.loads(summary_path.read_text())
    f, _ = global_loss_grad(data.shards, data.kind, uniform_weights(data.m), np.array(summary["x_final"]))
    assert abs(rows[-1].f_global - f) <= 1e-12
    assert summary["config"] == DESK.to_dict()


def test_zero_iterations_hits_the_cap():
    result = run_experiment(with_updates(TINY, max_iters=0))
    assert result.summary["status"] == "iteration_cap"
    assert result.trace == []
    assert trace_csv_text(result.trace).count("\n") == 1


def test_rerun_gives_identical_csv():
    texts = [strip_wall_time(trace_csv_text(run_experiment(TINY).trace)) for _ in range(2)]
    assert texts[0] == texts[1]


def test_config_echo_reproduces_run(tmp_path):
    first = run_experiment(TINY)
    _, summary_path = write_run_outputs(first, tmp_path)
    echoed = RunConfig(**json.loads(summary_path.read_text())["config"])
    again = run_experiment(echoed)
    assert strip_wall_time(trace_csv_text(first.trace)) == strip_wall_time(trace_csv_text(again.trace))


@pytest.mark.parametrize("algorithm", ["fedavg", "fedprox", "fedalt", "fedsim"])
def test_baselines_stop_on_gap_or_cap(algorithm):
    cfg = with_updates(TINY, algorithm=algorithm, max_iters=300)
    result = run_experiment(cfg)
    s = result.summary
    assert s["status"] in ("stopped_by_gap", "iteration_cap")
    if s["status"] == "stopped_by_gap":
        assert baseline_stopping_met(s["f"], s["f_ref"])
    ref = run_experiment(with_updates(TINY, algorithm="fedadmm")).summary
    assert s["f_ref"] == ref["f"]


def test_divergence_is_reported_not_raised():
    cfg = with_updates(TINY, algorithm="fedprox", fedprox_lr=100.0, max_iters=50)
    result = run_experiment(cfg, f_ref=-1.0)
    assert result.summary["status"] == "diverged"
    assert result.summary["message"]


def test_inner_failure_is_reported():
    cfg = with_updates(TINY, kappa_max=1, eps0=1e-30)
    assert run_experiment(cfg).summary["status"] == "inner_solve_failed"


def test_other_participation_policies_run():
    for changes in ({"participation": "cover", "s0": 2}, {"participation": "straggler", "m0": 2}):
        result = run_experiment(with_updates(TINY, **changes))
        assert result.summary["status"] == "stopped_by_gradient"


# ---- sweeps

def sweep_cr(rows):
    return [(r["n"], r["m"], r["rho"], r["k0"], r["algorithm"], r["median_cr"], r["instances_ok"]) for r in rows]


def test_single_cell_sweep_equals_single_run():
    spec = SweepSpec(((5, 10, 0.5, 5),), instances=1, base_seed=3)
    result = median_sweep(spec, ["fedadmm"], TINY)
    run = run_experiment(with_updates(TINY, seed=instance_seed(3, 0))).summary
    assert result.rows[0]["median_cr"] == run["cr"]
    assert result.rows[0]["instances_ok"] == 1 and not result.rows[0]["partial"]


def test_grid_order_and_workers_do_not_matter():
    grid = [(5, 10, 0.5, k0) for k0 in (1, 3, 6)] + [(5, 12, 0.5, 3)]
    shuffled = list(grid)
    random.Random(0).shuffle(shuffled)
    a = median_sweep(SweepSpec(tuple(grid), instances=3), ["fedadmm", "fedavg"], TINY)
    b = median_sweep(SweepSpec(tuple(shuffled), instances=3), ["fedavg", "fedadmm"], TINY, workers=2)
    assert sweep_cr(a.rows) == sweep_cr(b.rows)
    assert [r[:4] + (r[5],) for r in a.runs] == [r[:4] + (r[5],) for r in b.runs]


def test_wide_k0_grid_executes_every_cell():
    spec = SweepSpec.product([5], [10], [0.5], [1, 10, 30, 50], instances=1)
    result = median_sweep(spec, ["fedadmm"], TINY)
    assert [r["k0"] for r in result.rows] == [1, 10, 30, 50]
    assert all(r["instances_ok"] == 1 for r in result.rows)


def test_instance_errors_mark_cells_partial(monkeypatch):
    real = harness.run_experiment
    bad_seed = instance_seed(0, 1)

    def flaky(cfg, f_ref=None, data=None):
        if cfg.seed == bad_seed:
            raise RuntimeError("boom")
        return real(cfg, f_ref, data)

    monkeypatch.setattr(harness, "run_experiment", flaky)
    result = median_sweep(SweepSpec(((5, 10, 0.5, 5),), instances=3), ["fedadmm"], TINY)
    row = result.rows[0]
    assert row["partial"] and row["instances_ok"] == 2
    assert any(r[5].startswith("error") for r in result.runs)


def test_sweep_files(tmp_path):
    result = median_sweep(SweepSpec(((5, 10, 0.5, 5),), instances=2), ["fedadmm"], TINY)
    csv_path, json_path = write_sweep_outputs(result, tmp_path)
    rows = read_sweep_csv(csv_path)
    assert list(rows[0]) == list(harness.SWEEP_COLUMNS)
    assert json.loads(json_path.read_text())[0]["median_cr"] == result.rows[0]["median_cr"]
    table = render_table(rows)
    assert table.splitlines()[0].split() == list(harness.SWEEP_COLUMNS)


def test_sweep_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec((), instances=1)
    with pytest.raises(ValueError):
        SweepSpec(((1, 1, 1.0, 1),), instances=0)
