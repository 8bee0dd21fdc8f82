"""Seeded, counter-based random streams.

Every stochastic operation takes an integer ``seed`` and derives its own
stream from ``(seed, *path)`` so that results never depend on call order.
Honey generation goes one step further and gives each face its own Philox
counter block, which is what lets sharded generation reproduce the
sequential draws.
"""
from __future__ import annotations

import hashlib
import os

import numpy as np

SEED_ENV_VAR = "HONEYVAULT_SEED"


def _path_word(item: int | str) -> int:
    if isinstance(item, (int, np.integer)):
        if item < 0:
            raise ValueError("stream path integers must be non-negative")
        return int(item)
    digest = hashlib.blake2b(str(item).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _seed_sequence(seed: int, path: tuple) -> np.random.SeedSequence:
    if seed is None or int(seed) < 0:
        raise ValueError("seed must be a non-negative integer")
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_path_word(p) for p in path))


def substream(seed: int, *path: int | str) -> np.random.Generator:
    """Independent generator for the stream named by ``(seed, *path)``."""
    return np.random.Generator(np.random.Philox(_seed_sequence(seed, path)))


class FaceStreams:
    """Per-face Philox substreams sharing one key.

    Face ``i`` starts at counter ``(0, 0, 0, i)``; the low words advance as
    the face draws, so distinct faces never overlap.
    """

    def __init__(self, seed: int, *path: int | str):
        self.seed = int(seed)
        self.path = path
        self._key = _seed_sequence(seed, path).generate_state(2, np.uint64)

    def __call__(self, face_id: int) -> np.random.Generator:
        counter = np.array([0, 0, 0, face_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self._key, counter=counter))


def seed_from_env(default: int | None = None) -> int | None:
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None or raw.strip() == "":
        return default
    return int(raw)
