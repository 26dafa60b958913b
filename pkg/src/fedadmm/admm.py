"""Inexact consensus ADMM for federated learning.

Each client i keeps a local model x_i, a multiplier pi_i and the packed
message z_i = sigma_i x_i + pi_i.  Every k0 iterations the server forms
x = sum_i z_i / sigma (over all clients, using stale z for idle ones),
draws the next participating set, and broadcasts x.  Participating
clients shrink their tolerance eps_i <- nu_i eps_i, solve the local
augmented-Lagrangian subproblem to that tolerance with a linearised
proximal recursion, then update pi_i and z_i.  Idle clients do nothing.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import FederatedDataset
from .errors import ConfigError, InnerSolveError
from .model import ClientShard, ModelKind, global_loss_grad, lipschitz_estimate, local_grad, local_loss
from .participation import RoundClock, SelectionPlan, next_omega
from .trace import TraceRecord

LYAPUNOV_EPS_WEIGHT = 29.0


@dataclass(frozen=True)
class ClientState:
    x: np.ndarray
    pi: np.ndarray
    z: np.ndarray
    eps: float
    sigma: float
    nu: float
    alpha: float
    r: float
    last_selected: int = 0
    # f_i(x), kept so the Lyapunov value costs no extra loss evaluations
    loss: float = math.nan


@dataclass
class ServerState:
    x: np.ndarray
    sigma: float
    clock: RoundClock
    k: int = 0
    omega: tuple[int, ...] = ()
    cr: int = 0
    f: float = math.nan
    grad_norm_sq: float = math.nan
    lyapunov: float = math.nan
    started: float = field(default_factory=time.perf_counter)

    @property
    def tau(self) -> int:
        return self.clock.tau(self.k)


@dataclass(frozen=True)
class InnerSolverConfig:
    kappa_max: int = 100_000
    varrho: float = 2.0
    s: float = 0.0

    def __post_init__(self):
        if self.kappa_max < 1:
            raise ValueError("kappa_max must be >= 1")
        if not self.varrho > 1.0:
            raise ValueError("varrho must exceed 1")
        if self.s < 0:
            raise ValueError("s must be nonnegative")


@dataclass(frozen=True)
class StepReport:
    record: TraceRecord
    selected: tuple[int, ...]
    aggregated: bool
    # (client, ||alpha grad f_i(x_i) + pi_i||^2, eps_i) for each selected client
    certificates: list[tuple[int, float, float]]
    aggregation_residual: float | None
    descent_slack: float


def sigma_values(rule, alpha: Sequence[float], r: Sequence[float], cfg: InnerSolverConfig | None = None) -> np.ndarray:
    """Penalty parameters sigma_i for a named rule or an explicit list.

    ``paper_experiment``: 0.2 r_i / m.  ``theory``: 3 alpha_i r_i.
    ``inner_bound``: alpha_i s + varrho alpha_i r_i / 2 (from ``cfg``).
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    m = alpha.shape[0]
    if isinstance(rule, str):
        if rule == "paper_experiment":
            sigma = 0.2 * r / m
        elif rule == "theory":
            sigma = 3.0 * alpha * r
        elif rule == "inner_bound":
            cfg = cfg or InnerSolverConfig()
            sigma = alpha * cfg.s + cfg.varrho * alpha * r / 2.0
        else:
            raise ConfigError(f"unknown sigma rule {rule!r}")
    else:
        sigma = np.asarray(rule, dtype=np.float64)
        if sigma.shape != (m,):
            raise ConfigError(f"explicit sigma needs {m} values")
    if np.any(~(sigma > 0)):
        raise ConfigError("every sigma_i must be positive")
    return sigma


def aggregate(zs: Sequence[np.ndarray], sigma: float) -> np.ndarray:
    """Server average (1/sigma) * sum_i z_i over all clients, index order."""
    total = np.zeros_like(zs[0])
    for z in zs:
        total = total + z
    return total / sigma


def pack_z(client: ClientState) -> np.ndarray:
    return client.sigma * client.x + client.pi


def dual_update(client: ClientState, x_new: np.ndarray, xbar: np.ndarray) -> np.ndarray:
    return client.pi + client.sigma * (x_new - xbar)


def subproblem_residual(client: ClientState, v: np.ndarray, grad_v: np.ndarray, xbar: np.ndarray) -> np.ndarray:
    """Gradient of the local augmented Lagrangian at v."""
    return client.alpha * grad_v + client.pi + client.sigma * (v - xbar)


def local_solve_inexact(
    client: ClientState,
    xbar: np.ndarray,
    shard: ClientShard,
    kind: ModelKind,
    cfg: InnerSolverConfig = InnerSolverConfig(),
    *,
    return_grad: bool = False,
):
    """Run the linearised proximal recursion from v = xbar until the
    subproblem residual squared is at most ``client.eps``.

    Returns ``(x_new, inner_iters)`` where inner_iters counts the updates
    performed (always at least one).  With ``return_grad`` the gradient of
    f_i at x_new is appended.
    """
    a_r = client.alpha * client.r
    denom = a_r + client.sigma
    anchor = client.sigma * xbar - client.pi
    v = xbar
    g = local_grad(shard, kind, v)
    best = math.inf
    for it in range(1, cfg.kappa_max + 1):
        v_new = (a_r * v + anchor - client.alpha * g) / denom
        g = local_grad(shard, kind, v_new)
        res = subproblem_residual(client, v_new, g, xbar)
        res_sq = float(res @ res)
        if res_sq <= client.eps:
            return (v_new, it, g) if return_grad else (v_new, it)
        best = min(best, res_sq)
        if np.array_equal(v_new, v):
            raise InnerSolveError(
                f"inner recursion stalled at residual {res_sq:.3e} > eps {client.eps:.3e}", best=best
            )
        v = v_new
    raise InnerSolveError(
        f"no iterate met eps {client.eps:.3e} within {cfg.kappa_max} steps", best=best
    )


def kappa_bound(alpha: float, r: float, sigma: float, varrho: float, dist_sq: float, eps: float) -> int:
    """Worst-case inner step index guaranteeing the residual test.

    ceil(log_varrho(ceil(2 (alpha^2 r^2 + sigma^2) dist_sq / eps)) - 1), at least 0.
    """
    if not varrho > 1.0 or not eps > 0.0:
        raise ValueError("need varrho > 1 and eps > 0")
    q = math.ceil(2.0 * ((alpha * r) ** 2 + sigma ** 2) * dist_sq / eps)
    if q <= 1:
        return 0
    kappa = math.log(q) / math.log(varrho) - 1.0
    # guard against log round-off pushing an exact integer up by one
    nearest = round(kappa)
    if abs(kappa - nearest) < 1e-12:
        kappa = nearest
    return max(0, math.ceil(kappa))


def init_run(
    data: FederatedDataset,
    alpha: Sequence[float],
    sigma_rule="paper_experiment",
    eps0: float | Sequence[float] = 1.0,
    nu: float | Sequence[float] = 0.95,
    init_mode: str = "experiment",
    *,
    clock: RoundClock = RoundClock(1),
    x0: np.ndarray | Sequence[np.ndarray] | None = None,
    r: Sequence[float] | None = None,
    inner: InnerSolverConfig | None = None,
) -> tuple[ServerState, list[ClientState]]:
    """Initial server and client states.

    ``init_mode="experiment"`` starts every x_i and pi_i at zero.
    ``init_mode="algorithm"`` starts x_i at ``x0`` (default zero) and sets
    pi_i = -alpha_i grad f_i(x_i), which makes every residual certificate
    hold from the first iteration.
    """
    m, n = data.m, data.n
    alpha = np.asarray(alpha, dtype=np.float64)
    if r is None:
        r = [lipschitz_estimate(s, data.kind) for s in data.shards]
    sigma = sigma_values(sigma_rule, alpha, r, inner)
    eps0 = np.broadcast_to(np.asarray(eps0, dtype=np.float64), (m,))
    nu = np.broadcast_to(np.asarray(nu, dtype=np.float64), (m,))
    if np.any(~(eps0 > 0)):
        raise ConfigError("eps0 must be positive")
    if np.any((nu < 0.5) | (nu >= 1.0)):
        raise ConfigError("nu must lie in [1/2, 1)")
    if x0 is None:
        starts = [np.zeros(n) for _ in range(m)]
    else:
        x0 = np.asarray(x0, dtype=np.float64)
        starts = [x0.copy() for _ in range(m)] if x0.ndim == 1 else [row.copy() for row in x0]

    clients = []
    for i, shard in enumerate(data.shards):
        if init_mode == "experiment":
            x = np.zeros(n)
            pi = np.zeros(n)
        elif init_mode == "algorithm":
            x = starts[i]
            pi = -alpha[i] * local_grad(shard, data.kind, x)
        else:
            raise ConfigError(f"unknown init mode {init_mode!r}")
        c = ClientState(
            x=x, pi=pi, z=np.zeros(n), eps=float(eps0[i]), sigma=float(sigma[i]),
            nu=float(nu[i]), alpha=float(alpha[i]), r=float(r[i]),
            loss=local_loss(shard, data.kind, x),
        )
        clients.append(replace(c, z=pack_z(c)))

    sigma_total = 0.0
    for c in clients:
        sigma_total += c.sigma
    server = ServerState(x=np.zeros(n), sigma=sigma_total, clock=clock, omega=tuple(range(m)))
    _refresh_global(server, data, alpha)
    server.lyapunov = lyapunov(server, clients)
    return server, clients


def _refresh_global(server: ServerState, data: FederatedDataset, alpha) -> None:
    f, g = global_loss_grad(data.shards, data.kind, alpha, server.x)
    server.f = float(f)
    server.grad_norm_sq = float(g @ g)


def lyapunov(server: ServerState, clients: Sequence[ClientState], shards=None, kind=None) -> float:
    """Augmented Lagrangian at (x, W, Pi) plus the tolerance penalty
    sum_i 29 eps_i / ((1 - nu_i) sigma_i).

    Uses each client's cached loss unless ``shards``/``kind`` are given.
    """
    total = 0.0
    for i, c in enumerate(clients):
        loss = c.loss if shards is None else local_loss(shards[i], kind, c.x)
        diff = c.x - server.x
        total += c.alpha * loss + float(diff @ c.pi) + 0.5 * c.sigma * float(diff @ diff)
    for c in clients:
        total += LYAPUNOV_EPS_WEIGHT * c.eps / ((1.0 - c.nu) * c.sigma)
    return total


def stationarity_residuals(server: ServerState, clients: Sequence[ClientState], shards, kind) -> tuple[float, float, float]:
    """(max_i ||alpha_i grad f_i(x_i) + pi_i||, max_i ||x_i - x||, ||sum_i pi_i||)."""
    grad_res = 0.0
    cons = 0.0
    pi_sum = np.zeros_like(server.x)
    for shard, c in zip(shards, clients):
        phi = c.alpha * local_grad(shard, kind, c.x) + c.pi
        grad_res = max(grad_res, float(np.linalg.norm(phi)))
        cons = max(cons, float(np.linalg.norm(c.x - server.x)))
        pi_sum = pi_sum + c.pi
    return grad_res, cons, float(np.linalg.norm(pi_sum))


def aggregation_identity_residual(server: ServerState, clients: Sequence[ClientState]) -> float:
    """||sum_i (sigma_i (x_i - x) + pi_i)|| / (1 + sum_i ||z_i||)."""
    total = np.zeros_like(server.x)
    scale = 1.0
    for c in clients:
        total = total + (c.sigma * (c.x - server.x) + c.pi)
        scale += float(np.linalg.norm(c.z))
    return float(np.linalg.norm(total)) / scale


def step(
    server: ServerState,
    clients: list[ClientState],
    data: FederatedDataset,
    alpha,
    plan: SelectionPlan | None,
    cfg: InnerSolverConfig = InnerSolverConfig(),
    *,
    omega: Sequence[int] | None = None,
) -> StepReport:
    """Advance one iteration k -> k+1, mutating ``server`` and replacing
    entries of ``clients`` for the participating set only.

    ``omega`` overrides the plan's draw when this step aggregates.
    """
    k = server.k
    clock = server.clock
    x_prev = server.x
    agg_res = None
    aggregated = clock.is_aggregation(k)
    if aggregated:
        server.x = aggregate([c.z for c in clients], server.sigma)
        server.cr += 2
        tau_next = clock.tau(k + 1)
        if omega is not None:
            server.omega = tuple(sorted(omega))
        else:
            server.omega = next_omega(plan, tau_next)
        if not server.omega:
            raise ValueError("participating set is empty")
        agg_res = aggregation_identity_residual(server, clients)
        _refresh_global(server, data, alpha)

    xbar = server.x
    inner_total = 0
    certs = []
    moved = 0.0
    for i in server.omega:
        c = clients[i]
        c = replace(c, eps=c.nu * c.eps)
        shard = data.shards[i]
        x_new, iters, g_new = local_solve_inexact(c, xbar, shard, data.kind, cfg, return_grad=True)
        inner_total += iters
        pi_new = dual_update(c, x_new, xbar)
        dx = x_new - c.x
        moved += c.sigma * float(dx @ dx)
        c = replace(c, x=x_new, pi=pi_new, last_selected=clock.tau(k + 1),
                    loss=local_loss(shard, data.kind, x_new))
        c = replace(c, z=pack_z(c))
        phi = c.alpha * g_new + c.pi
        certs.append((i, float(phi @ phi), c.eps))
        clients[i] = c

    server.k = k + 1
    dxbar = server.x - x_prev
    lyap = lyapunov(server, clients)
    descent = server.lyapunov - lyap - 0.1 * (server.sigma * float(dxbar @ dxbar) + moved)
    server.lyapunov = lyap
    record = TraceRecord(
        k=server.k,
        tau=server.tau,
        cr_cumulative=server.cr,
        f_global=server.f,
        grad_norm_sq=server.grad_norm_sq,
        lyapunov=lyap,
        inner_iters=inner_total,
        wall_ms=(time.perf_counter() - server.started) * 1e3,
    )
    return StepReport(record, server.omega, aggregated, certs, agg_res, descent)
