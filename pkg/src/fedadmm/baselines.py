"""FedAvg, FedProx and the FedAlt / FedSim personalisation baselines.

All four share the round clock, participation plan and communication
accounting of the ADMM engine, so a run with the same seed sees the same
participating sets.  FedAvg averages every client's (possibly stale) local
model; the other three average only the clients that worked last round.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import FederatedDataset
from .errors import DivergenceError
from .model import ClientShard, ModelKind, global_loss_grad, lipschitz_estimate, local_grad, local_loss
from .participation import RoundClock, SelectionPlan, next_omega
from .stopping import baseline_stopping_met
from .trace import TraceRecord

ALGORITHMS = ("fedavg", "fedprox", "fedalt", "fedsim")
DIVERGENCE_FACTOR = 10.0


@dataclass(frozen=True)
class FedAvgConfig:
    # None -> m / (2 max_i r_i)
    gamma: float | None = None


@dataclass(frozen=True)
class FedProxConfig:
    mu: float = 0.1
    inner_steps: int = 5
    # None -> 1 / (r_i + mu)
    inner_lr: float | None = None

    def __post_init__(self):
        if not self.mu > 0 or self.inner_steps < 0:
            raise ValueError("FedProx needs mu > 0 and inner_steps >= 0")


@dataclass(frozen=True)
class PersonalizationConfig:
    alpha_mix: float = 0.5
    mu: float = 0.001
    inner_steps: int = 5
    # None -> 1 / (r_i + 2 mu)
    inner_lr: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha_mix <= 1.0:
            raise ValueError("alpha_mix must lie in [0, 1]")
        if self.mu < 0 or self.inner_steps < 0:
            raise ValueError("mu and inner_steps must be nonnegative")


@dataclass
class BaselineState:
    algorithm: str
    x: np.ndarray
    xs: list[np.ndarray]
    clock: RoundClock
    r: list[float]
    vs: list[np.ndarray] | None = None
    k: int = 0
    omega: tuple[int, ...] = ()
    cr: int = 0
    f: float = math.nan
    grad_norm_sq: float = math.nan
    # clients that entered the most recent average
    last_averaged: tuple[int, ...] = ()
    started: float = field(default_factory=time.perf_counter)


def init_baseline(algorithm: str, data: FederatedDataset, alpha, clock: RoundClock, r=None) -> BaselineState:
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown baseline {algorithm!r}")
    n, m = data.n, data.m
    if r is None:
        r = [lipschitz_estimate(s, data.kind) for s in data.shards]
    state = BaselineState(
        algorithm=algorithm,
        x=np.zeros(n),
        xs=[np.zeros(n) for _ in range(m)],
        clock=clock,
        r=list(r),
        vs=[np.zeros(n) for _ in range(m)] if algorithm in ("fedalt", "fedsim") else None,
        omega=tuple(range(m)),
    )
    _refresh_global(state, data, alpha)
    return state


def _refresh_global(state: BaselineState, data: FederatedDataset, alpha) -> None:
    f, g = global_loss_grad(data.shards, data.kind, alpha, state.x)
    state.f = float(f)
    state.grad_norm_sq = float(g @ g)


def _mean(vectors: Sequence[np.ndarray]) -> np.ndarray:
    total = np.zeros_like(vectors[0])
    for v in vectors:
        total = total + v
    return total / len(vectors)


def fedprox_local(
    start: np.ndarray,
    xbar: np.ndarray,
    shard: ClientShard,
    kind: ModelKind,
    cfg: FedProxConfig,
    r: float,
) -> np.ndarray:
    """Gradient descent on f_i(v) + (mu/2)||v - xbar||^2 from ``start``."""
    lr = cfg.inner_lr if cfg.inner_lr is not None else 1.0 / (r + cfg.mu)
    if cfg.inner_steps == 0:
        return start
    diff = start - xbar
    initial = local_loss(shard, kind, start) + 0.5 * cfg.mu * float(diff @ diff)
    v = start
    for _ in range(cfg.inner_steps):
        v = v - lr * (local_grad(shard, kind, v) + cfg.mu * (v - xbar))
    diff = v - xbar
    final = local_loss(shard, kind, v) + 0.5 * cfg.mu * float(diff @ diff)
    _check_divergence(initial, final, "FedProx")
    return v


def _check_divergence(initial: float, final: float, who: str) -> None:
    if not math.isfinite(final) or final > DIVERGENCE_FACTOR * max(initial, 1e-300):
        raise DivergenceError(f"{who} local objective grew from {initial:.3e} to {final:.3e}")


def personalization_value(shard, kind, x, v, cfg: PersonalizationConfig) -> float:
    """h_i(x, v) = (1 - a) f_i(x) + a f_i(v) + (mu/2)||x - v||^2."""
    a = cfg.alpha_mix
    diff = x - v
    return (1.0 - a) * local_loss(shard, kind, x) + a * local_loss(shard, kind, v) + 0.5 * cfg.mu * float(diff @ diff)


def personalization_grad(shard, kind, x, v, cfg: PersonalizationConfig) -> tuple[np.ndarray, np.ndarray]:
    a = cfg.alpha_mix
    pull = cfg.mu * (x - v)
    gx = (1.0 - a) * local_grad(shard, kind, x) + pull if a < 1.0 else pull
    gv = a * local_grad(shard, kind, v) - pull if a > 0.0 else -pull
    return gx, gv


def personalization_local(
    x: np.ndarray,
    v: np.ndarray,
    shard: ClientShard,
    kind: ModelKind,
    cfg: PersonalizationConfig,
    r: float,
    simultaneous: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """One client's local work for FedSim (simultaneous) or FedAlt (personal block, then shared block)."""
    lr = cfg.inner_lr if cfg.inner_lr is not None else 1.0 / (r + 2.0 * cfg.mu)
    initial = personalization_value(shard, kind, x, v, cfg)
    if simultaneous:
        for _ in range(cfg.inner_steps):
            gx, gv = personalization_grad(shard, kind, x, v, cfg)
            x, v = x - lr * gx, v - lr * gv
    else:
        for _ in range(cfg.inner_steps):
            v = v - lr * personalization_grad(shard, kind, x, v, cfg)[1]
        for _ in range(cfg.inner_steps):
            x = x - lr * personalization_grad(shard, kind, x, v, cfg)[0]
    if cfg.inner_steps:
        _check_divergence(initial, personalization_value(shard, kind, x, v, cfg), "personalised")
    return x, v


def _average(state: BaselineState, m: int) -> None:
    if state.algorithm == "fedavg":
        members = tuple(range(m))
    else:
        members = state.omega
    state.x = _mean([state.xs[i] for i in members])
    state.last_averaged = members


def baseline_step(
    state: BaselineState,
    data: FederatedDataset,
    alpha,
    plan: SelectionPlan | None,
    cfg=None,
    *,
    omega: Sequence[int] | None = None,
) -> TraceRecord:
    """Advance one iteration; only clients in the current set change."""
    k = state.k
    m = data.m
    clock = state.clock
    aggregated = clock.is_aggregation(k)
    if aggregated:
        _average(state, m)
        state.cr += 2
        state.omega = tuple(sorted(omega)) if omega is not None else next_omega(plan, clock.tau(k + 1))
        if not state.omega:
            raise ValueError("participating set is empty")
        _refresh_global(state, data, alpha)

    grads = 0
    algo = state.algorithm
    for i in state.omega:
        shard = data.shards[i]
        start = state.x if aggregated else state.xs[i]
        if algo == "fedavg":
            cfg_ = cfg or FedAvgConfig()
            gamma = cfg_.gamma if cfg_.gamma is not None else m / (2.0 * max(state.r))
            state.xs[i] = start - (gamma / m) * local_grad(shard, data.kind, start)
            grads += 1
        elif algo == "fedprox":
            cfg_ = cfg or FedProxConfig()
            state.xs[i] = fedprox_local(start, state.x, shard, data.kind, cfg_, state.r[i])
            grads += cfg_.inner_steps
        else:
            cfg_ = cfg or PersonalizationConfig()
            state.xs[i], state.vs[i] = personalization_local(
                start, state.vs[i], shard, data.kind, cfg_, state.r[i], simultaneous=(algo == "fedsim")
            )
            grads += 2 * cfg_.inner_steps

    state.k = k + 1
    return TraceRecord(
        k=state.k,
        tau=clock.tau(state.k),
        cr_cumulative=state.cr,
        f_global=float(state.f),
        grad_norm_sq=state.grad_norm_sq,
        lyapunov=None,
        inner_iters=grads,
        wall_ms=(time.perf_counter() - state.started) * 1e3,
        algorithm=algo,
    )


def fedavg_step(state, data, alpha, plan, cfg: FedAvgConfig | None = None, **kw) -> TraceRecord:
    return baseline_step(state, data, alpha, plan, cfg, **kw)


def fedprox_step(state, data, alpha, plan, cfg: FedProxConfig | None = None, **kw) -> TraceRecord:
    return baseline_step(state, data, alpha, plan, cfg, **kw)


def fedalt_step(state, data, alpha, plan, cfg: PersonalizationConfig | None = None, **kw) -> TraceRecord:
    return baseline_step(state, data, alpha, plan, cfg, **kw)


def fedsim_step(state, data, alpha, plan, cfg: PersonalizationConfig | None = None, **kw) -> TraceRecord:
    return baseline_step(state, data, alpha, plan, cfg, **kw)


@dataclass
class BaselineResult:
    trace: list[TraceRecord]
    status: str
    state: BaselineState


def baseline_run(
    algorithm: str,
    data: FederatedDataset,
    alpha,
    plan: SelectionPlan,
    clock: RoundClock,
    f_ref: float,
    max_iters: int,
    cfg=None,
    r=None,
) -> BaselineResult:
    """Iterate until the global objective is within the gap rule of
    ``f_ref`` or ``max_iters`` is reached (status "iteration_cap")."""
    state = init_baseline(algorithm, data, alpha, clock, r)
    trace = []
    status = "iteration_cap"
    for _ in range(max_iters):
        rec = baseline_step(state, data, alpha, plan, cfg)
        trace.append(rec)
        if baseline_stopping_met(rec.f_global, f_ref):
            status = "stopped_by_gap"
            break
    return BaselineResult(trace, status, state)
