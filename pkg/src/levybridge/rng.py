"""Reproducible random streams.

Streams are Philox generators keyed from ``(seed, purpose, block)`` through
:class:`numpy.random.SeedSequence`, so any block of paths can be regenerated
independently of the others and of the number of worker threads.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK_SIZE = 4096
THREADS_ENV = "LEVYBRIDGE_THREADS"


def stream(seed: int, purpose: str, block: int = 0) -> np.random.Generator:
    """Independent generator for one block of work."""
    tag = zlib.crc32(purpose.encode())
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), tag, int(block)])
    return np.random.Generator(np.random.Philox(ss))


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def blocks(n: int, size: int = BLOCK_SIZE):
    """``(block_index, start, stop)`` triples covering ``range(n)``."""
    return [(b, s, min(s + size, n)) for b, s in enumerate(range(0, n, size))]


def map_blocks(fn, n: int, threads: int | None = None, size: int = BLOCK_SIZE):
    """Apply ``fn(block, start, stop)`` over all blocks; results in block order."""
    threads = default_threads() if threads is None else max(1, int(threads))
    work = blocks(n, size)
    if threads == 1 or len(work) == 1:
        return [fn(*b) for b in work]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), work))
