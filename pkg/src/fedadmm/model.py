"""Loss families, gradients and Lipschitz estimates for client shards.

Two closed-form models are supported: least-squares linear regression and
L2-regularised logistic regression.  Feature matrices may be dense numpy
arrays or scipy sparse matrices; everything here only needs ``A @ x`` and
``A.T @ r``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, DimensionError, ModelOverflowError

LIPSCHITZ_SAFETY = 1.01
POWER_RTOL = 1e-6
POWER_MAX_ITERS = 10_000


@dataclass(frozen=True)
class ModelKind:
    """Which loss family a client uses. ``lam`` only matters for logreg."""

    name: str = "linreg"
    lam: float = 0.0

    def __post_init__(self):
        if self.name not in ("linreg", "logreg"):
            raise ValueError(f"unknown model kind {self.name!r}")
        if not self.lam >= 0.0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")

    @classmethod
    def linreg(cls) -> "ModelKind":
        return cls("linreg", 0.0)

    @classmethod
    def logreg(cls, lam: float = 0.001) -> "ModelKind":
        return cls("logreg", float(lam))


@dataclass(frozen=True, eq=False)
class ClientShard:
    features: np.ndarray | sp.spmatrix
    labels: np.ndarray

    def __post_init__(self):
        features = self.features
        if sp.issparse(features):
            features = sp.csr_matrix(features, dtype=np.float64)
            values = features.data
        else:
            features = np.atleast_2d(np.asarray(features, dtype=np.float64))
            values = features
        labels = np.asarray(self.labels, dtype=np.float64).ravel()
        if features.shape[0] != labels.shape[0]:
            raise DimensionError(
                f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        if labels.shape[0] < 1:
            raise ValueError("a shard needs at least one sample")
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(labels))):
            raise ValueError("shard contains non-finite entries")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    def dense_features(self) -> np.ndarray:
        if sp.issparse(self.features):
            return self.features.toarray()
        return self.features


def _check_dim(shard: ClientShard, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != shard.n:
        raise DimensionError(f"parameter has shape {x.shape}, shard expects ({shard.n},)")
    return x


def _softplus(u: np.ndarray) -> np.ndarray:
    # ln(1 + e^u) without overflow
    return np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))


def _sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def local_loss(shard: ClientShard, kind: ModelKind, x: np.ndarray) -> float:
    """Value of f_i at ``x``."""
    x = _check_dim(shard, x)
    u = shard.features @ x
    if kind.name == "linreg":
        res = u - shard.labels
        value = 0.5 * float(res @ res) / shard.size
    else:
        value = float(np.sum(_softplus(u) - shard.labels * u)) / shard.size
        value += 0.5 * kind.lam * float(x @ x)
    if not np.isfinite(value):
        raise ModelOverflowError(f"local loss is not finite ({value})")
    return value


def local_grad(shard: ClientShard, kind: ModelKind, x: np.ndarray) -> np.ndarray:
    x = _check_dim(shard, x)
    u = shard.features @ x
    if kind.name == "linreg":
        g = shard.features.T @ (u - shard.labels) / shard.size
    else:
        g = shard.features.T @ (_sigmoid(u) - shard.labels) / shard.size
        g = g + kind.lam * x
    g = np.asarray(g, dtype=np.float64).ravel()
    if not np.all(np.isfinite(g)):
        raise ModelOverflowError("local gradient is not finite")
    return g


def _gram_top_eigenvalue(features) -> float:
    """Largest eigenvalue of A^T A by power iteration."""
    n = features.shape[1]
    # fixed start vector: all-positive so it is never orthogonal to a
    # nonnegative top eigenvector, perturbed to avoid symmetric traps
    v = 1.0 + 0.1 * np.sin(np.arange(1, n + 1, dtype=np.float64))
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(POWER_MAX_ITERS):
        w = np.asarray(features.T @ (features @ v)).ravel()
        lam_new = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(lam_new - lam) <= POWER_RTOL * abs(lam_new):
            return lam_new
        lam = lam_new
    raise ConvergenceError(
        f"power iteration did not converge in {POWER_MAX_ITERS} iterations", best=lam
    )


def lipschitz_estimate(shard: ClientShard, kind: ModelKind) -> float:
    """Certified upper bound on the gradient Lipschitz constant of f_i.

    Power iteration on A^T A gives lambda_max; the result is scaled by
    ``LIPSCHITZ_SAFETY`` to cover power-iteration under-estimation.
    """
    lam_max = _gram_top_eigenvalue(shard.features) / shard.size
    if kind.name == "linreg":
        return LIPSCHITZ_SAFETY * lam_max
    return LIPSCHITZ_SAFETY * lam_max / 4.0 + kind.lam


def validate_weights(alpha: Sequence[float], m: int) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (m,):
        raise DimensionError(f"expected {m} weights, got shape {alpha.shape}")
    if np.any(alpha <= 0.0):
        raise ValueError("weights must be positive")
    if abs(float(np.sum(alpha)) - 1.0) > 1e-12:
        raise ValueError(f"weights sum to {np.sum(alpha)!r}, not 1")
    return alpha


def uniform_weights(m: int) -> np.ndarray:
    return np.full(m, 1.0 / m)


def stacked_loss_grad(
    shards: Sequence[ClientShard],
    kind: ModelKind,
    alpha: Sequence[float],
    xs: Sequence[np.ndarray],
) -> tuple[float, list[np.ndarray]]:
    """F(W) = sum_i alpha_i f_i(x_i) and the per-client blocks alpha_i grad f_i(x_i)."""
    value = 0.0
    blocks = []
    for shard, a, x in zip(shards, alpha, xs):
        value += a * local_loss(shard, kind, x)
        blocks.append(a * local_grad(shard, kind, x))
    return value, blocks


def global_loss_grad(
    shards: Sequence[ClientShard],
    kind: ModelKind,
    alpha: Sequence[float],
    x: np.ndarray,
) -> tuple[float, np.ndarray]:
    """f(x) and grad f(x) for the weighted federation objective.

    Clients are summed in ascending index order, the same order used by
    ``stacked_loss_grad``, so F(x, ..., x) == f(x) bit for bit.
    """
    if not shards:
        raise ValueError("need at least one shard")
    n = shards[0].n
    for s in shards:
        if s.n != n:
            raise DimensionError("shards disagree on feature dimension")
    value = 0.0
    grad = np.zeros(n)
    for shard, a in zip(shards, alpha):
        value += a * local_loss(shard, kind, x)
        grad = grad + a * local_grad(shard, kind, x)
    return value, grad


def global_loss(shards, kind, alpha, x) -> float:
    value = 0.0
    for shard, a in zip(shards, alpha):
        value += a * local_loss(shard, kind, x)
    return value
