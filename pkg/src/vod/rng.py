"""Seeded, splittable random streams.

Every random draw in the package goes through :func:`generator`, which wraps
numpy's counter-based Philox bit generator. Seeds are integers or tuples of
integers; a tuple ``(seed, a, b)`` addresses an independent sub-stream, so
per-option or per-replicate streams never overlap and never depend on call
order.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

Seed = Union[int, Sequence[int]]


def _entropy(seed: Seed) -> list[int]:
    if isinstance(seed, (int, np.integer)):
        parts = [int(seed)]
    else:
        parts = [int(s) for s in seed]
    if not parts or any(p < 0 for p in parts):
        raise ValueError(f"seed must be a non-negative int or non-empty tuple of them, got {seed!r}")
    return parts


def seed_sequence(seed: Seed) -> np.random.SeedSequence:
    parts = _entropy(seed)
    return np.random.SeedSequence(entropy=parts[0], spawn_key=tuple(parts[1:]))


def generator(seed: Seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_sequence(seed)))


def child(seed: Seed, *keys: int) -> tuple[int, ...]:
    """Address the sub-stream ``keys`` below ``seed``."""
    return tuple(_entropy(seed)) + tuple(int(k) for k in keys)


def uniform_open_closed(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform draws on (0, 1]."""
    return 1.0 - rng.random(size)
