"""Run configuration: a flat, typed JSON document.

Unknown keys are rejected.  Values resolve as: command-line flag, then the
config file, then the defaults below.  ``FEDADMM_OUTPUT_DIR`` overrides
``output_dir`` from the file but not an explicit flag.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError

SCHEMA_VERSION = 1
OUTPUT_DIR_ENV = "FEDADMM_OUTPUT_DIR"

ALGORITHM_NAMES = ("fedadmm", "fedavg", "fedprox", "fedalt", "fedsim")

_INT = (int,)
_NUM = (int, float)
_STR = (str,)
_BOOL = (bool,)
_LIST = (list,)


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    # data
    dataset: str = "synthetic"
    m: int = 20
    n: int = 20
    d_min: int = 50
    d_max: int = 150
    planted: bool = False
    data_path: str | None = None
    libsvm_n: int | None = None
    model: str = "linreg"
    lam: float = 0.001
    # algorithm
    algorithm: str = "fedadmm"
    k0: int = 10
    participation: str = "uniform"
    rho: float = 0.5
    s0: int = 1
    m0: int | None = None
    straggler_delay: str = "exponential"
    sigma_rule: str | list = "paper_experiment"
    init_mode: str = "experiment"
    eps0: float | None = None
    nu: float = 0.95
    kappa_max: int = 100_000
    varrho: float = 2.0
    eps_tol: float | None = None
    max_iters: int = 1_000_000
    fedavg_gamma: float | None = None
    fedprox_mu: float = 0.1
    fedprox_steps: int = 5
    fedprox_lr: float | None = None
    pers_alpha: float = 0.5
    pers_mu: float = 0.001
    pers_steps: int = 5
    pers_lr: float | None = None
    # bookkeeping
    seed: int = 0
    output_dir: str = "runs"
    workers: int | None = None
    # sweeps
    grid_n: list | None = None
    grid_m: list | None = None
    grid_rho: list | None = None
    grid_k0: list | None = None
    instances: int = 20
    algorithms: list | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def resolved_eps0(self) -> float:
        return float(self.k0 ** 2) if self.eps0 is None else float(self.eps0)

    @property
    def resolved_eps_tol(self) -> float:
        if self.eps_tol is not None:
            return float(self.eps_tol)
        return 1e-3 if self.model == "linreg" else 1e-7


_TYPES = {
    "schema_version": (_INT, False), "dataset": (_STR, False), "m": (_INT, False), "n": (_INT, False),
    "d_min": (_INT, False), "d_max": (_INT, False), "planted": (_BOOL, False),
    "data_path": (_STR, True), "libsvm_n": (_INT, True), "model": (_STR, False), "lam": (_NUM, False),
    "algorithm": (_STR, False), "k0": (_INT, False), "participation": (_STR, False), "rho": (_NUM, False),
    "s0": (_INT, False), "m0": (_INT, True), "straggler_delay": (_STR, False),
    "sigma_rule": (_STR + _LIST, False), "init_mode": (_STR, False), "eps0": (_NUM, True),
    "nu": (_NUM, False), "kappa_max": (_INT, False), "varrho": (_NUM, False), "eps_tol": (_NUM, True),
    "max_iters": (_INT, False), "fedavg_gamma": (_NUM, True), "fedprox_mu": (_NUM, False),
    "fedprox_steps": (_INT, False), "fedprox_lr": (_NUM, True), "pers_alpha": (_NUM, False),
    "pers_mu": (_NUM, False), "pers_steps": (_INT, False), "pers_lr": (_NUM, True), "seed": (_INT, False),
    "output_dir": (_STR, False), "workers": (_INT, True), "grid_n": (_LIST, True), "grid_m": (_LIST, True),
    "grid_rho": (_LIST, True), "grid_k0": (_LIST, True), "instances": (_INT, False), "algorithms": (_LIST, True),
}

_CHOICES = {
    "dataset": ("synthetic", "libsvm", "shards"),
    "model": ("linreg", "logreg"),
    "algorithm": ALGORITHM_NAMES,
    "participation": ("uniform", "cover", "straggler"),
    "init_mode": ("experiment", "algorithm"),
    "straggler_delay": ("exponential", "constant"),
}

assert set(_TYPES) == {f.name for f in fields(RunConfig)}


def _check_type(key: str, value) -> None:
    types, nullable = _TYPES[key]
    if value is None:
        if not nullable:
            raise ConfigError(f"{key}: may not be null")
        return
    # bool is an int subclass; only accept it where bool is declared
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(f"{key}: expected {'/'.join(t.__name__ for t in types)}, got bool")
    if not isinstance(value, types):
        raise ConfigError(f"{key}: expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__}")


def validate(cfg: RunConfig) -> RunConfig:
    for f in fields(cfg):
        _check_type(f.name, getattr(cfg, f.name))
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {cfg.schema_version}")
    for key, choices in _CHOICES.items():
        if getattr(cfg, key) not in choices:
            raise ConfigError(f"{key}: {getattr(cfg, key)!r} not in {choices}")
    if isinstance(cfg.sigma_rule, str) and cfg.sigma_rule not in ("paper_experiment", "theory", "inner_bound"):
        raise ConfigError(f"sigma_rule: unknown rule {cfg.sigma_rule!r}")
    if cfg.m < 1 or cfg.n < 1 or cfg.k0 < 1:
        raise ConfigError("m, n and k0 must be >= 1")
    if not 0 < cfg.rho <= 1:
        raise ConfigError("rho: must lie in (0, 1]")
    if not 0.5 <= cfg.nu < 1:
        raise ConfigError("nu: must lie in [1/2, 1)")
    if cfg.max_iters < 0 or cfg.instances < 1:
        raise ConfigError("max_iters must be >= 0 and instances >= 1")
    if cfg.dataset == "synthetic" and cfg.model != "linreg":
        raise ConfigError("model: synthetic data is linear regression only")
    if cfg.dataset != "synthetic" and not cfg.data_path:
        raise ConfigError("data_path: required for libsvm/shards datasets")
    if cfg.participation == "straggler" and cfg.m0 is None:
        raise ConfigError("m0: required for straggler participation")
    for key in ("algorithms",):
        for name in getattr(cfg, key) or ():
            if name not in ALGORITHM_NAMES:
                raise ConfigError(f"{key}: unknown algorithm {name!r}")
    return cfg


def from_dict(raw: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    for key, value in raw.items():
        _check_type(key, value)
    return validate(RunConfig(**raw))


def load_config(path, overrides: dict | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir:
        raw["output_dir"] = env_dir
    raw.update(overrides or {})
    return from_dict(raw)


def parse_override(text: str) -> tuple[str, object]:
    """``key=value`` with the value parsed as JSON when possible."""
    key, sep, value = text.partition("=")
    if not sep:
        raise ConfigError(f"override {text!r} is not key=value")
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return key.strip(), parsed


def with_updates(cfg: RunConfig, **changes) -> RunConfig:
    return validate(replace(cfg, **changes))
