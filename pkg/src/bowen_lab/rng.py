"""Counter-based randomness and an order-preserving parallel map.

Every random draw is keyed by ``(seed, center index, probe index)`` through a
Philox generator, so results never depend on which worker handles which
item or in what order items finish.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional

import numpy as np

THREADS_ENV = "BOWEN_LAB_THREADS"


def generator(seed: int, center_ix: int = 0, probe_ix: int = 0) -> np.random.Generator:
    """Independent generator for one (seed, center, probe) cell."""
    ss = np.random.SeedSequence([int(seed), int(center_ix), int(probe_ix)])
    return np.random.Generator(np.random.Philox(ss))


def worker_count(workers: Optional[int] = None) -> int:
    """Explicit worker count, else ``$BOWEN_LAB_THREADS``, else 1."""
    if workers is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        workers = int(env) if env else 1
    return max(1, int(workers))


def parallel_map(fn: Callable, items: Iterable, workers: Optional[int] = None) -> list:
    """``[fn(item) for item in items]`` evaluated on a thread pool, in input order."""
    items = list(items)
    n = worker_count(workers)
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def pick_centers(sample_points: np.ndarray, count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded choice of ``count`` distinct sample points (indices, points)."""
    rng = generator(seed, -1 & 0xFFFFFFFF, 0)
    n = len(sample_points)
    idx = rng.permutation(n)[:min(count, n)]
    return idx, sample_points[idx]


def ball_probes(seed: int, center_ix: int, count: int, dim: int, radius: float) -> np.ndarray:
    """``count`` points drawn uniformly from the ``dim``-ball of ``radius``."""
    out = np.empty((count, dim))
    for i in range(count):
        g = generator(seed, center_ix, i)
        v = g.standard_normal(dim)
        v /= np.linalg.norm(v)
        out[i] = v * radius * g.uniform() ** (1.0 / dim)
    return out
