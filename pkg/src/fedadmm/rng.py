"""Named random streams.

Every consumer of randomness asks for a stream by purpose name (and
optionally an extra integer key such as a round index).  Streams are
PCG64 generators seeded from ``SeedSequence([seed, purpose_id, *keys])``,
so they are independent of each other and of call order.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("sizes", "samples", "shuffle", "planted", "partition", "omega", "straggler-means", "straggler-delays", "instance")


def _purpose_id(purpose: str) -> int:
    if purpose not in STREAMS:
        raise KeyError(f"unknown random stream {purpose!r}")
    return zlib.crc32(purpose.encode())


def stream(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _purpose_id(purpose), *map(int, keys)])
    return np.random.Generator(np.random.PCG64(seq))


def derive_seed(seed: int, *keys: int) -> int:
    """A fresh 63-bit seed for a sub-experiment, e.g. one sweep instance."""
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _purpose_id("instance"), *map(int, keys)])
    return int(seq.generate_state(1, np.uint64)[0] >> np.uint64(1))
