"""Baseline force backends: serial loop and static contiguous chunks."""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .octree import ForceParams, Octree, SingularForceError


@dataclass
class ChunkReport:
    ranges: list[tuple[int, int]]
    times: list[float] = field(default_factory=list)

    @property
    def imbalance(self) -> float:
        """max/min chunk wall time (1.0 is perfectly balanced)."""
        lo = min(self.times)
        return max(self.times) / lo if lo > 0 else float("inf")


def _range_accel(tree: Octree, pos, theta, params, start, stop):
    acc, lens, bad = K.bh_accel_range(
        start, stop, pos, float(theta), tree.child, tree.kind, tree.leaf, tree.half,
        tree.node_mass, tree.com, params.g_const, params.eps2,
    )
    if bad >= 0:
        raise SingularForceError(f"particle {bad}: coincident source with zero softening")
    return acc, lens


def serial_force(tree: Octree, pos, theta: float, params: ForceParams = ForceParams()):
    """``(acc, list_lengths)`` for every particle, in index order, one thread."""
    pos = np.ascontiguousarray(pos, dtype=float)
    return _range_accel(tree, pos, theta, params, 0, len(pos))


def chunk_ranges(n: int, workers: int) -> list[tuple[int, int]]:
    """``workers`` contiguous ranges whose sizes differ by at most one."""
    edges = np.linspace(0, n, workers + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def static_chunk_force(tree: Octree, pos, theta: float, workers: int, params: ForceParams = ForceParams()):
    """Split particles into equal index ranges, one thread each, no rebalancing.

    Returns ``(acc, list_lengths, ChunkReport)``.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    pos = np.ascontiguousarray(pos, dtype=float)
    n = len(pos)
    report = ChunkReport(chunk_ranges(n, workers), [0.0] * workers)
    acc = np.zeros((n, 3))
    lens = np.zeros(n, dtype=np.int64)
    errors: list[BaseException] = []

    def run(k, lo, hi):
        t0 = time.perf_counter()
        try:
            a, l = _range_accel(tree, pos, theta, params, lo, hi)
            acc[lo:hi] = a
            lens[lo:hi] = l
        except BaseException as e:
            errors.append(e)
        report.times[k] = time.perf_counter() - t0

    if workers == 1:
        run(0, 0, n)
    else:
        threads = [threading.Thread(target=run, args=(k, lo, hi)) for k, (lo, hi) in enumerate(report.ranges)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if errors:
        raise errors[0]
    return acc, lens, report
