"""Termination tests and communication-round accounting."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class StoppingConfig:
    eps_tol: float = 1e-3
    grad0_norm_sq: float = float("inf")
    max_iters: int = 1_000_000

    def __post_init__(self):
        if not self.eps_tol > 0:
            raise ValueError("eps_tol must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")

    def threshold(self, n: int, m: int, d: int) -> float:
        return min(self.grad0_norm_sq / 5.0, 5.0 * self.eps_tol * n / (m * d))


def default_eps_tol(kind_name: str) -> float:
    return 1e-3 if kind_name == "linreg" else 1e-7


def stopping_met(grad_norm_sq: float, cfg: StoppingConfig, n: int, m: int, d: int) -> bool:
    """||grad f(x)||^2 < min(||grad f(0)||^2 / 5, 5 eps n / (m d))."""
    return grad_norm_sq < cfg.threshold(n, m, d)


def baseline_stopping_met(f_w: float, f_ref: float) -> bool:
    """f(w) - f_ref <= 2 (1 + |f_ref|) 1e-4."""
    return f_w - f_ref <= 2.0 * (1.0 + abs(f_ref)) * 1e-4


def cr_count(k: int, k0: int) -> int:
    """ceil(2k / k0): two transfers per aggregation."""
    if k0 < 1:
        raise ValueError("k0 must be >= 1")
    return -(-2 * k // k0)
