"""Deterministic named RNG substreams.

Every source of randomness in a run is derived from the single config seed
plus a path of names (e.g. ``substream(seed, "phase2", "round", 3, "client", 0)``),
so results are reproducible regardless of execution order and safe to
parallelize per client.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key(part: object) -> int:
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def substream(seed: int, *path: object) -> np.random.Generator:
    """Return a generator keyed by ``seed`` and a path of names/indices."""
    spawn_key = tuple(_key(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=spawn_key))
