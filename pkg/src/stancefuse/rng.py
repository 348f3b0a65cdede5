"""Named, splittable random streams.

Every consumer of randomness asks for a stream by a path of names, e.g.
``stream(seed, "init", "text.tok_emb")``. The path is hashed into a Philox
key, so streams are independent of the order in which they are requested
and identical across platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(seed: int, *path) -> int:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    text = "/".join([str(int(seed))] + [str(p) for p in path])
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=16).digest(), "little")


def stream(seed: int, *path) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *path)))
