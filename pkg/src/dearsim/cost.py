"""Alpha-beta timing of ring collectives.

Ring reduce-scatter and ring all-gather each take ``P - 1`` rounds moving ``d / P``
bytes per round, so an all-reduce built from the pair costs exactly their sum.
Reduction arithmetic is not charged.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import KB, MB, ClusterSpec


class Collective(str, enum.Enum):
    REDUCE_SCATTER = "ReduceScatter"
    ALL_GATHER = "AllGather"
    ALL_REDUCE = "AllReduce"


@dataclass(frozen=True)
class CollectiveTiming:
    collective: Collective
    message_bytes: float
    seconds: float


def reduce_scatter_time(d: float, c: ClusterSpec) -> float:
    if d < 0:
        raise ValueError(f"message size must be >= 0, got {d}")
    p = c.workers
    return (p - 1) * (c.alpha + (d / p) * c.beta)


def all_gather_time(d: float, c: ClusterSpec) -> float:
    if d < 0:
        raise ValueError(f"message size must be >= 0, got {d}")
    p = c.workers
    return (p - 1) * (c.alpha + (d / p) * c.beta)


def all_reduce_time(d: float, c: ClusterSpec) -> float:
    """Ring all-reduce: one reduce-scatter followed by one all-gather."""
    return reduce_scatter_time(d, c) + all_gather_time(d, c)


def startup_time(c: ClusterSpec) -> float:
    """Latency-only cost of one all-reduce, ``2 (P - 1) alpha``."""
    return 2 * (c.workers - 1) * c.alpha


def partitioned_all_reduce_time(d: float, n_parts: int, c: ClusterSpec) -> float:
    """All-reduce of ``d`` bytes sent as ``n_parts`` equal, sequential messages."""
    if n_parts < 1:
        raise ValueError(f"n_parts must be >= 1, got {n_parts}")
    return all_reduce_time(d, c) + (n_parts - 1) * startup_time(c)


def timing(collective: Collective | str, d: float, c: ClusterSpec) -> CollectiveTiming:
    collective = Collective(collective)
    fn = {
        Collective.REDUCE_SCATTER: reduce_scatter_time,
        Collective.ALL_GATHER: all_gather_time,
        Collective.ALL_REDUCE: all_reduce_time,
    }[collective]
    return CollectiveTiming(collective, d, fn(d, c))


@dataclass(frozen=True)
class Calibration:
    alpha: float
    beta: float
    clamped: bool = False
    residual: float = 0.0

    def __iter__(self):
        yield self.alpha
        yield self.beta

    def cluster(self, workers: int, name: str = "calibrated") -> ClusterSpec:
        return ClusterSpec(workers, self.alpha, self.beta, name)


def calibrate_alpha_beta(measurements: Sequence[tuple[float, float]], workers: int) -> Calibration:
    """Least-squares fit of the ring all-reduce model to ``(bytes, seconds)`` points.

    With exactly two distinct sizes the fit is the exact solution of the 2x2 system.
    Negative estimates are clamped to zero and flagged.
    """
    if workers < 2:
        raise ValueError("calibration needs at least 2 workers")
    if len(measurements) < 2:
        raise ValueError("calibration needs at least 2 measurements")
    sizes = np.array([float(m[0]) for m in measurements])
    times = np.array([float(m[1]) for m in measurements])
    if np.any(sizes < 0) or np.any(times < 0):
        raise ValueError("measurements must be non-negative")
    if np.all(sizes == sizes[0]):
        raise ValueError("rank-deficient calibration")

    p = workers
    a = np.column_stack([np.full_like(sizes, 2.0 * (p - 1)), 2.0 * (p - 1) * sizes / p])
    # column scaling keeps the bytes column from swamping the conditioning
    scale = np.abs(a).max(axis=0)
    if len(sizes) == 2:
        coef = np.linalg.solve(a / scale, times)
    else:
        coef, *_ = np.linalg.lstsq(a / scale, times, rcond=None)
    alpha, beta = (coef / scale).tolist()
    residual = float(np.linalg.norm(a @ np.array([alpha, beta]) - times))

    clamped = alpha < 0 or beta < 0
    if clamped:
        warnings.warn(
            f"calibration produced negative constants (alpha={alpha:.3e}, beta={beta:.3e}); clamping to 0",
            RuntimeWarning,
            stacklevel=2,
        )
        alpha, beta = max(alpha, 0.0), max(beta, 0.0)
    return Calibration(alpha, beta, clamped, residual)


# 64-GPU 10GbE all-reduce measurements: 1 MB in ~4.5 ms, 500 KB in ~3.9 ms
TEN_GBE_MEASUREMENTS = ((1 * MB, 4.5e-3), (500 * KB, 3.9e-3))
TEN_GBE_WORKERS = 64


def ten_gbe_cluster(workers: int = TEN_GBE_WORKERS) -> ClusterSpec:
    """Cluster with (alpha, beta) fitted to the 64-worker 10GbE measurements."""
    fit = calibrate_alpha_beta(TEN_GBE_MEASUREMENTS, TEN_GBE_WORKERS)
    return fit.cluster(workers, name="10GbE")
