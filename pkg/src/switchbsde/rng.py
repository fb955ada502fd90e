"""Counter-based random streams keyed by (seed, scenario index, purpose).

Every scenario gets its own Philox stream whose key is derived from the
global seed and a purpose tag, and whose counter starts at the scenario
index. Draws for scenario ``k`` therefore never depend on how scenarios
are scheduled across workers.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

DEFAULT_SEED = 42


def _tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed: int, index: int, tag: str) -> np.random.Generator:
    """Return the generator for scenario ``index`` and purpose ``tag``."""
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _tag_id(tag)])
    key = key.generate_state(2, dtype=np.uint64)
    counter = np.array([0, 0, 0, int(index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def for_each_scenario(
    M: int,
    fill: Callable[[int, int], None],
    workers: int = 1,
) -> None:
    """Call ``fill(start, stop)`` over contiguous scenario blocks.

    ``fill`` must write into preallocated per-scenario slots only, so the
    result is identical for any worker count.
    """
    workers = max(1, int(workers))
    if workers == 1 or M < 2 * workers:
        fill(0, M)
        return
    edges = np.linspace(0, M, workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fill, int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]
        for fut in futures:
            fut.result()
