"""Seeded, splittable random streams.

Streams are numpy PCG64 generators keyed by (seed, stream name); the name is
hashed with a fixed digest so the mapping is stable across processes and
platforms (Python's own ``hash`` is salted).
"""

from __future__ import annotations

import hashlib

import numpy as np

STREAMS = ("env", "data", "diffusion", "agent", "curriculum")


def stable_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def seeded_rng(seed: int, stream: str | None = None) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = () if stream is None else (stable_key(stream),)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


class RngStreams:
    """Lazily created named streams for one run."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = seeded_rng(self.seed, name)
        return self._streams[name]


def categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One draw per row of ``probs`` (inverse-CDF on a single uniform each)."""
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    idx = (u[:, None] >= cdf).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)
