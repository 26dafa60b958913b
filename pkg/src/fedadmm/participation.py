"""Which clients work in each round.

Client indices are 0-based throughout.  ``next_omega`` returns a sorted
tuple so results compare and serialise deterministically.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np

from . import rng


@dataclass(frozen=True)
class RoundClock:
    k0: int = 1

    def __post_init__(self):
        if self.k0 < 1:
            raise ValueError("k0 must be >= 1")

    def tau(self, k: int) -> int:
        return -(-k // self.k0)

    def is_aggregation(self, k: int) -> bool:
        return k % self.k0 == 0


@dataclass(frozen=True)
class UniformRho:
    rho: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must be in (0, 1], got {self.rho}")


@dataclass(frozen=True)
class CoverSchedule:
    """Rotate through ``s0`` groups; by default contiguous near-equal blocks."""

    s0: int = 1
    groups: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        if self.s0 < 1:
            raise ValueError("s0 must be >= 1")
        if self.groups is not None:
            object.__setattr__(self, "groups", tuple(tuple(sorted(g)) for g in self.groups))
            if len(self.groups) != self.s0:
                raise ValueError("need exactly s0 groups")


@dataclass(frozen=True)
class Straggler:
    """Keep the first ``m0`` responders.

    Per-client mean delays are drawn once from uniform[mean_low, mean_high]
    unless ``means`` is given.  ``delay`` is "exponential" or "constant"
    (every round returns the mean itself).
    """

    m0: int
    delay: str = "exponential"
    means: tuple[float, ...] | None = None
    mean_low: float = 1.0
    mean_high: float = 10.0

    def __post_init__(self):
        if self.m0 < 1:
            raise ValueError("m0 must be >= 1")
        if self.delay not in ("exponential", "constant"):
            raise ValueError(f"unknown delay distribution {self.delay!r}")
        if self.means is not None:
            object.__setattr__(self, "means", tuple(float(v) for v in self.means))


Policy = Union[UniformRho, CoverSchedule, Straggler]


@dataclass(frozen=True)
class SelectionPlan:
    policy: Policy
    m: int
    seed: int = 0
    _means: tuple[float, ...] | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        p = self.policy
        if isinstance(p, Straggler):
            if not p.m0 < self.m:
                raise ValueError(f"straggler m0={p.m0} must be < m={self.m}")
            means = p.means
            if means is None:
                gen = rng.stream(self.seed, "straggler-means")
                means = tuple(float(v) for v in gen.uniform(p.mean_low, p.mean_high, self.m))
            elif len(means) != self.m:
                raise ValueError("need one mean delay per client")
            object.__setattr__(self, "_means", means)
        elif isinstance(p, CoverSchedule) and p.groups is not None:
            covered = set().union(*map(set, p.groups))
            if not covered <= set(range(self.m)):
                raise ValueError("cover groups reference clients outside [m]")

    @property
    def mean_delays(self) -> tuple[float, ...] | None:
        return self._means

    def uniform_size(self) -> int:
        return max(1, math.floor(self.policy.rho * self.m + 1e-9))

    def to_dict(self) -> dict:
        p = self.policy
        out = {"m": self.m, "seed": self.seed}
        if isinstance(p, UniformRho):
            out.update(policy="uniform", rho=p.rho)
        elif isinstance(p, CoverSchedule):
            out.update(policy="cover", s0=p.s0, groups=None if p.groups is None else [list(g) for g in p.groups])
        else:
            out.update(policy="straggler", m0=p.m0, delay=p.delay, means=list(self._means))
        return out


def cover_groups(m: int, s0: int) -> list[tuple[int, ...]]:
    """Split [m] into s0 contiguous near-equal blocks (larger blocks first)."""
    if s0 > m:
        raise ValueError(f"cannot cover {m} clients with {s0} nonempty groups")
    base, extra = divmod(m, s0)
    groups = []
    start = 0
    for j in range(s0):
        size = base + (1 if j < extra else 0)
        groups.append(tuple(range(start, start + size)))
        start += size
    return groups


def sample_straggler(plan: SelectionPlan, tau: int) -> tuple[int, ...]:
    p = plan.policy
    if not isinstance(p, Straggler):
        raise TypeError("sample_straggler needs a Straggler plan")
    means = np.asarray(plan.mean_delays)
    if p.delay == "constant":
        delays = means.copy()
    else:
        delays = rng.stream(plan.seed, "straggler-delays", tau).exponential(means)
    # lexsort: last key is primary; ties fall back to client index
    order = np.lexsort((np.arange(plan.m), delays))
    return tuple(sorted(int(i) for i in order[: p.m0]))


def next_omega(plan: SelectionPlan, tau: int) -> tuple[int, ...]:
    """Participating clients for round ``tau`` (tau >= 1)."""
    if tau < 1:
        raise ValueError("rounds are numbered from 1")
    p = plan.policy
    if isinstance(p, UniformRho):
        size = plan.uniform_size()
        if size >= plan.m:
            return tuple(range(plan.m))
        chosen = rng.stream(plan.seed, "omega", tau).choice(plan.m, size=size, replace=False)
        return tuple(sorted(int(i) for i in chosen))
    if isinstance(p, CoverSchedule):
        groups = p.groups if p.groups is not None else cover_groups(plan.m, p.s0)
        return tuple(groups[(tau - 1) % p.s0])
    return sample_straggler(plan, tau)


def verify_cover(omegas: Sequence[Iterable[int]], s0: int, m: int) -> bool:
    """True iff each aligned window of s0 consecutive sets covers all m clients."""
    if s0 < 1 or len(omegas) % s0 != 0:
        raise ValueError(f"sequence length {len(omegas)} is not a multiple of s0={s0}")
    everyone = set(range(m))
    for start in range(0, len(omegas), s0):
        seen = set()
        for omega in omegas[start:start + s0]:
            seen.update(omega)
        if not everyone <= seen:
            return False
    return True


def max_selection_gap(omegas: Sequence[Iterable[int]], m: int) -> int:
    """Largest u - v over consecutive selections v < u of the same client.

    Rounds are numbered from 1 and round 0 selects everyone.  Aligned
    s0-covering implies a gap of at most 2*s0 - 1, not s0.
    """
    last = [0] * m
    worst = 0
    for t, omega in enumerate(omegas, start=1):
        for i in omega:
            worst = max(worst, t - last[i])
            last[i] = t
    return worst


def cover_probability(m: int, s0: int, sizes: Sequence[int]) -> float:
    """Chance that a fixed client appears in at least one of s0 independent
    uniform draws of the given sizes.  Evaluated in exact rational arithmetic."""
    if len(sizes) != s0:
        raise ValueError(f"need {s0} sizes, got {len(sizes)}")
    miss = Fraction(1)
    for size in sizes:
        if not 1 <= size <= m:
            raise ValueError(f"size {size} outside [1, {m}]")
        miss *= Fraction(m - int(size), m)
    return float(1 - miss)


def dump_omegas(omegas: Sequence[Iterable[int]], path, plan: SelectionPlan | None = None) -> None:
    payload = {"omegas": [sorted(int(i) for i in o) for o in omegas]}
    if plan is not None:
        payload["plan"] = plan.to_dict()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")
