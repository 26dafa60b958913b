"""Federated datasets: the heavy-tailed synthetic regression instance,
libsvm text files, random partitioning and an on-disk shard format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import rng
from .errors import DimensionError, LibsvmFormatError
from .model import ClientShard, ModelKind

MANIFEST_NAME = "manifest.json"
SHARDS_NAME = "shards.npz"
FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class FederatedDataset:
    shards: tuple[ClientShard, ...]
    kind: ModelKind
    seed: int | None = None
    source: str = "memory"

    def __post_init__(self):
        object.__setattr__(self, "shards", tuple(self.shards))
        if not self.shards:
            raise ValueError("a federated dataset needs at least one client")
        n = self.shards[0].n
        if any(s.n != n for s in self.shards):
            raise DimensionError("all shards must share the feature dimension")

    @property
    def m(self) -> int:
        return len(self.shards)

    @property
    def n(self) -> int:
        return self.shards[0].n

    @property
    def sizes(self) -> list[int]:
        return [s.size for s in self.shards]

    @property
    def d(self) -> int:
        return sum(self.sizes)


@dataclass(frozen=True)
class GenSpec:
    m: int
    n: int
    seed: int = 0
    d_min: int = 50
    d_max: int = 150
    # not part of the reference recipe: b = <a, w> + drawn noise
    planted: bool = False

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be positive")
        if not 1 <= self.d_min <= self.d_max:
            raise ValueError("need 1 <= d_min <= d_max")


def _split(rows: np.ndarray, labels: np.ndarray, sizes: Sequence[int]) -> list[ClientShard]:
    shards = []
    start = 0
    for size in sizes:
        shards.append(ClientShard(rows[start:start + size], labels[start:start + size]))
        start += size
    return shards


def block_counts(d: int) -> tuple[int, int, int]:
    """Rows drawn from (normal, Student-t(5), uniform[-5, 5])."""
    third = math.ceil(d / 3)
    return third, third, d - 2 * third


def draw_pooled_linreg(spec: GenSpec) -> tuple[list[int], np.ndarray]:
    """Shard sizes and the unshuffled (d, n+1) sample block, last column b."""
    sizes = rng.stream(spec.seed, "sizes").integers(spec.d_min, spec.d_max + 1, size=spec.m)
    sizes = [int(s) for s in sizes]
    d = sum(sizes)
    n_norm, n_t, n_unif = block_counts(d)
    gen = rng.stream(spec.seed, "samples")
    width = spec.n + 1
    pooled = np.vstack([
        gen.standard_normal((n_norm, width)),
        gen.standard_t(5, (n_t, width)),
        gen.uniform(-5.0, 5.0, (n_unif, width)),
    ])
    if spec.planted:
        w = rng.stream(spec.seed, "planted").standard_normal(spec.n)
        pooled[:, -1] += pooled[:, :-1] @ w
    return sizes, pooled


def generate_linreg(spec: GenSpec) -> FederatedDataset:
    sizes, pooled = draw_pooled_linreg(spec)
    perm = rng.stream(spec.seed, "shuffle").permutation(pooled.shape[0])
    pooled = pooled[perm]
    shards = _split(pooled[:, :-1], pooled[:, -1], sizes)
    return FederatedDataset(shards, ModelKind.linreg(), seed=spec.seed, source="synthetic")


def near_equal_sizes(d: int, m: int) -> list[int]:
    base, extra = divmod(d, m)
    return [base + 1 if i < extra else base for i in range(m)]


def partition(features, labels, m: int, seed: int, kind: ModelKind | None = None) -> FederatedDataset:
    """Shuffle the samples, then cut them into m contiguous near-equal shards."""
    labels = np.asarray(labels, dtype=np.float64).ravel()
    d = labels.shape[0]
    if features.shape[0] != d:
        raise DimensionError(f"{features.shape[0]} rows but {d} labels")
    if d < m:
        raise ValueError(f"cannot split {d} samples across {m} clients")
    perm = rng.stream(seed, "partition").permutation(d)
    if sp.issparse(features):
        features = sp.csr_matrix(features)[perm]
    else:
        features = np.asarray(features)[perm]
    labels = labels[perm]
    shards = _split(features, labels, near_equal_sizes(d, m))
    return FederatedDataset(shards, kind or ModelKind.logreg(), seed=seed, source="partition")


def _parse_label(token: str, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise LibsvmFormatError(f"bad label {token!r}", lineno) from None
    if value == 1.0:
        return 1.0
    if value in (0.0, -1.0):
        return 0.0
    raise LibsvmFormatError(f"label {token!r} is not in {{-1, 0, 1}}", lineno)


def load_libsvm(path, n: int | None = None) -> tuple[sp.csr_matrix, np.ndarray]:
    """Read a binary-classification libsvm file.

    Labels -1/+1 or 0/1 come back as 0/1.  Indices are 1-based and must be
    strictly ascending within a line.  The feature dimension is the largest
    index seen unless ``n`` is given.
    """
    labels = []
    indptr = [0]
    indices = []
    values = []
    max_index = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            labels.append(_parse_label(tokens[0], lineno))
            prev = 0
            for tok in tokens[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise LibsvmFormatError(f"expected idx:value, got {tok!r}", lineno)
                try:
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise LibsvmFormatError(f"cannot parse {tok!r}", lineno) from None
                if idx < 1:
                    raise LibsvmFormatError(f"index {idx} is not 1-based", lineno)
                if idx <= prev:
                    raise LibsvmFormatError(f"index {idx} does not ascend after {prev}", lineno)
                prev = idx
                indices.append(idx - 1)
                values.append(val)
            max_index = max(max_index, prev)
            indptr.append(len(indices))
    if n is None:
        n = max_index
    elif max_index > n:
        raise DimensionError(f"file uses index {max_index} but n={n}")
    features = sp.csr_matrix(
        (np.asarray(values, dtype=np.float64), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
        shape=(len(labels), n),
    )
    return features, np.asarray(labels, dtype=np.float64)


def write_libsvm(path, features, labels, negative_label: int = -1) -> None:
    csr = sp.csr_matrix(features)
    with open(path, "w", encoding="utf-8") as fh:
        for i, label in enumerate(np.asarray(labels).ravel()):
            lo, hi = csr.indptr[i], csr.indptr[i + 1]
            cols = csr.indices[lo:hi]
            vals = csr.data[lo:hi]
            order = np.argsort(cols)
            parts = [str(1 if label == 1 else negative_label)]
            parts += [f"{c + 1}:{float(v)!r}" for c, v in zip(cols[order], vals[order]) if v != 0.0]
            fh.write(" ".join(parts) + "\n")


def save_dataset(ds: FederatedDataset, directory) -> Path:
    """Write ``shards.npz`` plus ``manifest.json`` into ``directory``.

    The npz holds ``features_<i>`` (dense float64, d_i x n) and
    ``labels_<i>`` for i = 0..m-1.  The manifest records m, n, d, d_i,
    seed, model kind and format version.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for i, shard in enumerate(ds.shards):
        arrays[f"features_{i}"] = shard.dense_features()
        arrays[f"labels_{i}"] = shard.labels
    np.savez(directory / SHARDS_NAME, **arrays)
    manifest = {
        "format_version": FORMAT_VERSION,
        "m": ds.m,
        "n": ds.n,
        "d": ds.d,
        "d_i": ds.sizes,
        "seed": ds.seed,
        "kind": ds.kind.name,
        "lam": ds.kind.lam,
        "source": ds.source,
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    return directory


def load_dataset(directory) -> FederatedDataset:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported shard format {manifest.get('format_version')!r}")
    with np.load(directory / SHARDS_NAME) as npz:
        shards = [
            ClientShard(npz[f"features_{i}"], npz[f"labels_{i}"]) for i in range(manifest["m"])
        ]
    if [s.size for s in shards] != manifest["d_i"]:
        raise ValueError("manifest shard sizes do not match the stored arrays")
    kind = ModelKind(manifest["kind"], manifest["lam"])
    return FederatedDataset(shards, kind, seed=manifest["seed"], source=manifest["source"])
