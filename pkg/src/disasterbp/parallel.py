"""Replica fan-out with ordered reduction.

Replicas are grouped into fixed-size chunks. Chunk ``c`` always draws from
``stream.child(c)`` and results are returned in chunk order, so the output is
bit-identical whatever the number of worker threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import RngStream

DEFAULT_CHUNK = 4096


def default_workers() -> int:
    env = os.environ.get("DISASTERBP_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, min(8, os.cpu_count() or 1))


def chunk_sizes(n: int, chunk: int = DEFAULT_CHUNK) -> list[int]:
    if n <= 0:
        return []
    full, rest = divmod(n, chunk)
    return [chunk] * full + ([rest] if rest else [])


def fan_out(task: Callable[[int, int, np.random.Generator], object], n: int,
            stream: RngStream, *, chunk: int = DEFAULT_CHUNK,
            workers: int | None = None, threaded: bool = True) -> list:
    """Run ``task(chunk_index, size, generator)`` over all chunks, in order.

    ``threaded`` should be False when ``task`` holds the GIL (pure Python);
    threads then add overhead without speed-up.
    """
    sizes = chunk_sizes(n, chunk)
    jobs = [(c, size, stream.child(c)) for c, size in enumerate(sizes)]
    workers = default_workers() if workers is None else max(1, int(workers))
    if not threaded or workers == 1 or len(jobs) <= 1:
        return [task(c, size, s.generator()) for c, size, s in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(task, c, size, s.generator()) for c, size, s in jobs]
        return [f.result() for f in futures]


@dataclass
class MomentAccumulator:
    """Streaming mean and variance of vectors; merges associatively (Chan et al.)."""

    shape: tuple = ()
    n: int = 0
    mean: np.ndarray = field(default=None)
    m2: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.shape)
        if self.m2 is None:
            self.m2 = np.zeros(self.shape)

    def add_batch(self, values: np.ndarray) -> "MomentAccumulator":
        values = np.asarray(values, dtype=float)
        nb = values.shape[0]
        if nb == 0:
            return self
        mb = values.mean(axis=0)
        m2b = ((values - mb) ** 2).sum(axis=0)
        return self.merge(MomentAccumulator(self.shape, nb, mb, m2b))

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, np.array(other.mean, float), np.array(other.m2, float)
            return self
        n = self.n + other.n
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.n / n)
        self.m2 = self.m2 + other.m2 + delta ** 2 * (self.n * other.n / n)
        self.n = n
        return self

    @property
    def variance(self) -> np.ndarray:
        if self.n < 2:
            return np.full(np.shape(self.mean), np.nan)
        return self.m2 / (self.n - 1)

    @property
    def std_err(self) -> np.ndarray:
        return np.sqrt(self.variance / self.n)


def reduce_batches(batches: Sequence[np.ndarray], shape: tuple = ()) -> MomentAccumulator:
    acc = MomentAccumulator(shape)
    for b in batches:
        acc.add_batch(b)
    return acc
