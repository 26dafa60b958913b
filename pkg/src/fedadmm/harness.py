"""Experiment orchestration: single runs, median sweeps and their files."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import admm, baselines
from .config import ALGORITHM_NAMES, RunConfig, with_updates
from .data import FederatedDataset, GenSpec, generate_linreg, load_dataset, load_libsvm, partition
from .errors import DivergenceError, InnerSolveError, ModelOverflowError
from .model import ModelKind, global_loss_grad, lipschitz_estimate, uniform_weights
from .participation import CoverSchedule, RoundClock, SelectionPlan, Straggler, UniformRho
from .rng import derive_seed
from .stopping import StoppingConfig, baseline_stopping_met, cr_count, stopping_met
from .trace import TraceRecord, write_trace_csv

__all__ = [
    "RunResult", "SweepSpec", "StoppingConfig", "baseline_stopping_met", "cr_count", "stopping_met",
    "build_dataset", "build_plan", "run_experiment", "median_sweep", "lower_median",
    "write_run_outputs", "write_sweep_outputs", "SWEEP_COLUMNS",
]

SWEEP_COLUMNS = ("n", "m", "rho", "k0", "algorithm", "median_cr", "median_wall_ms", "instances_ok")


@dataclass
class RunResult:
    trace: list[TraceRecord]
    summary: dict
    x_final: np.ndarray | None = None


def build_dataset(cfg: RunConfig) -> FederatedDataset:
    if cfg.dataset == "synthetic":
        return generate_linreg(GenSpec(m=cfg.m, n=cfg.n, seed=cfg.seed, d_min=cfg.d_min,
                                       d_max=cfg.d_max, planted=cfg.planted))
    kind = ModelKind.linreg() if cfg.model == "linreg" else ModelKind.logreg(cfg.lam)
    if cfg.dataset == "libsvm":
        features, labels = load_libsvm(cfg.data_path, cfg.libsvm_n)
        return partition(features, labels, cfg.m, cfg.seed, kind)
    return load_dataset(cfg.data_path)


def build_plan(cfg: RunConfig, m: int) -> SelectionPlan:
    if cfg.participation == "uniform":
        policy = UniformRho(cfg.rho)
    elif cfg.participation == "cover":
        policy = CoverSchedule(cfg.s0)
    else:
        policy = Straggler(cfg.m0, delay=cfg.straggler_delay)
    return SelectionPlan(policy, m, seed=cfg.seed)


def _baseline_cfg(cfg: RunConfig, algorithm: str):
    if algorithm == "fedavg":
        return baselines.FedAvgConfig(cfg.fedavg_gamma)
    if algorithm == "fedprox":
        return baselines.FedProxConfig(cfg.fedprox_mu, cfg.fedprox_steps, cfg.fedprox_lr)
    return baselines.PersonalizationConfig(cfg.pers_alpha, cfg.pers_mu, cfg.pers_steps, cfg.pers_lr)


def _summary(cfg, algorithm, status, trace, x, f, grad_norm_sq, cr, extra=None) -> dict:
    out = {
        "algorithm": algorithm,
        "status": status,
        "k": trace[-1].k if trace else 0,
        "cr": cr,
        "f": float(f),
        "grad_norm_sq": float(grad_norm_sq),
        "wall_ms": trace[-1].wall_ms if trace else 0.0,
        "seed": cfg.seed,
        "x_final": [float(v) for v in x],
        "config": cfg.to_dict(),
    }
    out.update(extra or {})
    return out


def run_experiment(cfg: RunConfig, f_ref: float | None = None, data: FederatedDataset | None = None) -> RunResult:
    """Run ``cfg.algorithm`` on the configured instance.

    FedADMM stops on the gradient rule; baselines stop once their
    objective is within the gap rule of ``f_ref``, the converged FedADMM
    objective on the same instance (computed here when not supplied).
    Non-convergence is reported through ``summary["status"]``.
    """
    data = data if data is not None else build_dataset(cfg)
    alpha = uniform_weights(data.m)
    clock = RoundClock(cfg.k0)
    plan = build_plan(cfg, data.m)
    r = [lipschitz_estimate(s, data.kind) for s in data.shards]
    _, g0 = global_loss_grad(data.shards, data.kind, alpha, np.zeros(data.n))
    stop = StoppingConfig(cfg.resolved_eps_tol, float(g0 @ g0), cfg.max_iters)

    if cfg.algorithm == "fedadmm":
        return _run_fedadmm(cfg, data, alpha, clock, plan, r, stop)

    if f_ref is None:
        ref = _run_fedadmm(with_updates(cfg, algorithm="fedadmm"), data, alpha, clock, plan, r, stop)
        f_ref = ref.summary["f"]
    state = baselines.init_baseline(cfg.algorithm, data, alpha, clock, r)
    bcfg = _baseline_cfg(cfg, cfg.algorithm)
    trace: list[TraceRecord] = []
    status = "iteration_cap"
    message = None
    try:
        for _ in range(stop.max_iters):
            rec = baselines.baseline_step(state, data, alpha, plan, bcfg)
            trace.append(rec)
            if baseline_stopping_met(rec.f_global, f_ref):
                status = "stopped_by_gap"
                break
    except (DivergenceError, ModelOverflowError) as exc:
        status, message = "diverged", str(exc)
    summary = _summary(cfg, cfg.algorithm, status, trace, state.x, state.f, state.grad_norm_sq, state.cr,
                       {"f_ref": f_ref, "message": message})
    return RunResult(trace, summary, state.x)


def _run_fedadmm(cfg, data, alpha, clock, plan, r, stop: StoppingConfig) -> RunResult:
    inner = admm.InnerSolverConfig(kappa_max=cfg.kappa_max, varrho=cfg.varrho)
    sigma_rule = cfg.sigma_rule if isinstance(cfg.sigma_rule, str) else [float(v) for v in cfg.sigma_rule]
    server, clients = admm.init_run(
        data, alpha, sigma_rule, cfg.resolved_eps0, cfg.nu, cfg.init_mode, clock=clock, r=r, inner=inner
    )
    threshold = stop.threshold(data.n, data.m, data.d)
    trace: list[TraceRecord] = []
    status = "iteration_cap"
    message = None
    try:
        for _ in range(stop.max_iters):
            rep = admm.step(server, clients, data, alpha, plan, inner)
            trace.append(rep.record)
            if rep.record.grad_norm_sq < threshold:
                status = "stopped_by_gradient"
                break
    except (InnerSolveError, ModelOverflowError) as exc:
        status, message = "inner_solve_failed", str(exc)
    residuals = admm.stationarity_residuals(server, clients, data.shards, data.kind)
    summary = _summary(cfg, "fedadmm", status, trace, server.x, server.f, server.grad_norm_sq, server.cr, {
        "stationarity": {"grad": residuals[0], "consensus": residuals[1], "dual_sum": residuals[2]},
        "threshold": threshold,
        "message": message,
    })
    return RunResult(trace, summary, server.x)


def write_run_outputs(result: RunResult, directory, stem: str | None = None) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = stem or result.summary["algorithm"]
    trace_path = directory / f"{stem}_trace.csv"
    summary_path = directory / f"{stem}_summary.json"
    write_trace_csv(result.trace, trace_path)
    summary_path.write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n")
    return trace_path, summary_path


# ---------------------------------------------------------------- sweeps


def lower_median(values: Sequence[float]) -> float:
    """Median; for an even count, the lower of the two middle values."""
    if not values:
        return math.nan
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


@dataclass(frozen=True)
class SweepSpec:
    grid: tuple[tuple[int, int, float, int], ...]
    instances: int = 20
    base_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(tuple(c) for c in self.grid))
        if not self.grid:
            raise ValueError("sweep grid is empty")
        if self.instances < 1:
            raise ValueError("instances must be >= 1")

    @classmethod
    def product(cls, ns, ms, rhos, k0s, instances=20, base_seed=0) -> "SweepSpec":
        grid = [(n, m, rho, k0) for n in ns for m in ms for rho in rhos for k0 in k0s]
        return cls(tuple(grid), instances, base_seed)


def instance_seed(base_seed: int, instance: int) -> int:
    return derive_seed(base_seed, instance)


def _run_cell_instance(args) -> list[tuple]:
    base_cfg, cell, instance, algorithms = args
    n, m, rho, k0 = cell
    seed = instance_seed(base_cfg.seed, instance)
    cfg = with_updates(base_cfg, n=int(n), m=int(m), rho=float(rho), k0=int(k0), seed=seed)
    out = []
    try:
        data = build_dataset(cfg)
        ref = run_experiment(with_updates(cfg, algorithm="fedadmm"), data=data)
    except Exception as exc:  # recorded per cell, never aborts the sweep
        return [(cell, a, instance, None, None, f"error: {exc}") for a in algorithms]
    f_ref = ref.summary["f"]
    for algo in algorithms:
        if algo == "fedadmm":
            res = ref
        else:
            try:
                res = run_experiment(with_updates(cfg, algorithm=algo), f_ref=f_ref, data=data)
            except Exception as exc:
                out.append((cell, algo, instance, None, None, f"error: {exc}"))
                continue
        s = res.summary
        out.append((cell, algo, instance, s["cr"], s["wall_ms"], s["status"]))
    return out


@dataclass
class SweepResult:
    rows: list[dict]
    runs: list[tuple] = field(default_factory=list)


def median_sweep(spec: SweepSpec, algorithms: Sequence[str], base_cfg: RunConfig | None = None,
                 workers: int | None = None) -> SweepResult:
    """Median CR and wall time over ``spec.instances`` seeded instances for
    every grid cell and algorithm.

    Instance i uses the same derived seed in every cell, so cells differ
    only by their grid parameters.  Errors mark a run as failed without
    stopping the sweep.  Row order is canonical (sorted grid, then the
    algorithm order of ALGORITHM_NAMES) regardless of scheduling.
    """
    base_cfg = base_cfg or RunConfig()
    base_cfg = with_updates(base_cfg, seed=spec.base_seed)
    algorithms = [a for a in ALGORITHM_NAMES if a in set(algorithms)]
    tasks = [(base_cfg, cell, i, algorithms) for cell in sorted(set(spec.grid)) for i in range(spec.instances)]
    if workers is not None and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_cell_instance, tasks))
    else:
        chunks = [_run_cell_instance(t) for t in tasks]
    runs = sorted((r for chunk in chunks for r in chunk), key=lambda r: (r[0], ALGORITHM_NAMES.index(r[1]), r[2]))

    rows = []
    for cell in sorted(set(spec.grid)):
        for algo in algorithms:
            mine = [r for r in runs if r[0] == cell and r[1] == algo]
            done = [r for r in mine if r[3] is not None]
            ok = [r for r in done if r[5] in ("stopped_by_gradient", "stopped_by_gap")]
            n, m, rho, k0 = cell
            rows.append({
                "n": n, "m": m, "rho": rho, "k0": k0, "algorithm": algo,
                "median_cr": lower_median([r[3] for r in done]),
                "median_wall_ms": lower_median([r[4] for r in done]),
                "instances_ok": len(ok),
                "partial": len(done) < len(mine),
            })
    return SweepResult(rows, runs)


def write_sweep_outputs(result: SweepResult, directory, stem: str = "sweep") -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{stem}_summary.csv"
    json_path = directory / f"{stem}_summary.json"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in result.rows:
            writer.writerow([row[c] if not isinstance(row[c], float) else repr(row[c]) for c in SWEEP_COLUMNS])
    json_path.write_text(json.dumps(result.rows, indent=2) + "\n")
    return csv_path, json_path


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def render_table(rows: Iterable[dict], columns: Sequence[str] = SWEEP_COLUMNS) -> str:
    rows = [{c: str(r[c]) for c in columns} for r in rows]
    widths = {c: max([len(c)] + [len(r[c]) for r in rows]) for c in columns}
    lines = ["  ".join(c.rjust(widths[c]) for c in columns)]
    lines.append("  ".join("-" * widths[c] for c in columns))
    for r in rows:
        lines.append("  ".join(r[c].rjust(widths[c]) for c in columns))
    return "\n".join(lines)
