"""Seeded random streams and deterministic chunked parallel evaluation.

Every Monte Carlo loop in ficlab splits its work into fixed-size chunks and
gives each chunk its own child of a single :class:`numpy.random.SeedSequence`.
Because the chunking depends only on the problem size (never on the number
of workers), results are bit-identical for any ``workers`` setting.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

CHUNK = 1 << 15


def seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        return np.random.SeedSequence(int(seed.integers(2**63)))
    if seed is None:
        raise ValueError("a seed is required for reproducible simulation")
    return np.random.SeedSequence(int(seed))


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed_sequence(seed))


def spawn(seed, k: int) -> list[np.random.Generator]:
    """Return ``k`` independent generators derived from ``seed``."""
    return [np.random.default_rng(s) for s in seed_sequence(seed).spawn(k)]


def chunk_sizes(total: int, chunk: int = CHUNK) -> list[int]:
    if total <= 0:
        return []
    full, rest = divmod(total, chunk)
    return [chunk] * full + ([rest] if rest else [])


def pmap(fn: Callable[..., T], tasks: Sequence, workers: int = 1) -> list[T]:
    """Ordered map over ``tasks`` (each a tuple of arguments), optionally threaded.

    numpy releases the GIL in its vectorised kernels, so threads give real
    speedups for the chunked simulations here. Output order follows ``tasks``.
    """
    if workers is None or workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(lambda t: fn(*t), tasks))


def chunked_draws(fn: Callable[[np.random.Generator, int], T], total: int, seed,
                  workers: int = 1, chunk: int = CHUNK) -> list[T]:
    """Run ``fn(rng, size)`` over fixed chunks of ``total`` with per-chunk streams."""
    sizes = chunk_sizes(total, chunk)
    rngs = spawn(seed, len(sizes))
    return pmap(fn, list(zip(rngs, sizes)), workers)
