"""In-process ring collectives over virtual workers.

Workers run in lock step: every round each worker posts one chunk into its right
neighbour's inbox, then every worker drains its inbox. Chunk ``k`` of a ``d``-element
vector is a contiguous slice; the first ``d % P`` chunks carry one extra element.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


class ReplicaDivergenceError(ValueError):
    pass


def chunk_bounds(num_elems: int, workers: int) -> list[tuple[int, int]]:
    base, extra = divmod(num_elems, workers)
    bounds = []
    start = 0
    for k in range(workers):
        size = base + 1 if k < extra else base
        bounds.append((start, start + size))
        start += size
    return bounds


@dataclass
class WorkerState:
    rank: int
    vector: np.ndarray
    inbox: deque = field(default_factory=deque)


@dataclass
class RingTrace:
    """What crossed the ring: ``sent[r][p]`` is the element count worker ``p`` sent in round ``r``."""

    rounds: int = 0
    sent: list[list[int]] = field(default_factory=list)


@dataclass
class ScatteredChunks:
    """Per-worker chunks plus the chunk index each worker owns."""

    chunks: list[np.ndarray]
    owner_chunk: list[int]
    num_elems: int
    trace: RingTrace = field(default_factory=RingTrace)

    @property
    def workers(self) -> int:
        return len(self.chunks)


def _as_workers(vectors) -> list[WorkerState]:
    arrays = [np.array(v, dtype=np.float64, copy=True).reshape(-1) for v in vectors]
    if not arrays:
        raise ValueError("need at least one worker")
    n = arrays[0].size
    for rank, a in enumerate(arrays):
        if a.size != n:
            raise ValueError(f"length mismatch: worker 0 has {n} elements, worker {rank} has {a.size}")
    return [WorkerState(rank, a) for rank, a in enumerate(arrays)]


def ring_reduce_scatter(vectors) -> ScatteredChunks:
    """Ring reduce-scatter; worker ``p`` ends owning chunk ``(p + 1) % P`` summed over all workers."""
    workers = _as_workers(vectors)
    p_count = len(workers)
    n = workers[0].vector.size
    bounds = chunk_bounds(n, p_count)
    trace = RingTrace()

    for r in range(p_count - 1):
        sent_this_round = []
        for w in workers:
            k = (w.rank - r) % p_count
            lo, hi = bounds[k]
            workers[(w.rank + 1) % p_count].inbox.append((k, w.vector[lo:hi].copy()))
            sent_this_round.append(hi - lo)
        for w in workers:
            k, data = w.inbox.popleft()
            lo, hi = bounds[k]
            w.vector[lo:hi] += data
        trace.rounds += 1
        trace.sent.append(sent_this_round)

    owner = [(w.rank + 1) % p_count for w in workers]
    chunks = [w.vector[slice(*bounds[owner[w.rank]])].copy() for w in workers]
    return ScatteredChunks(chunks, owner, n, trace)


def ring_all_gather(scattered: ScatteredChunks) -> tuple[list[np.ndarray], RingTrace]:
    """Ring all-gather: each chunk travels rightwards until every worker holds it."""
    p_count = scattered.workers
    n = scattered.num_elems
    bounds = chunk_bounds(n, p_count)
    if sorted(scattered.owner_chunk) != list(range(p_count)):
        raise ValueError(f"chunk ownership must cover each chunk exactly once, got {scattered.owner_chunk}")
    for rank, (k, chunk) in enumerate(zip(scattered.owner_chunk, scattered.chunks)):
        lo, hi = bounds[k]
        if chunk.size != hi - lo:
            raise ValueError(f"worker {rank} holds {chunk.size} elements for chunk {k}, expected {hi - lo}")

    workers = [WorkerState(rank, np.zeros(n)) for rank in range(p_count)]
    last = list(scattered.owner_chunk)
    for w, k, chunk in zip(workers, last, scattered.chunks):
        w.vector[slice(*bounds[k])] = chunk
    trace = RingTrace()

    for _ in range(p_count - 1):
        sent_this_round = []
        for w in workers:
            k = last[w.rank]
            lo, hi = bounds[k]
            workers[(w.rank + 1) % p_count].inbox.append((k, w.vector[lo:hi].copy()))
            sent_this_round.append(hi - lo)
        for w in workers:
            k, data = w.inbox.popleft()
            w.vector[slice(*bounds[k])] = data
            last[w.rank] = k
        trace.rounds += 1
        trace.sent.append(sent_this_round)

    return [w.vector for w in workers], trace


def ring_all_reduce(vectors) -> list[np.ndarray]:
    """Sum over workers via reduce-scatter then all-gather."""
    gathered, _ = ring_all_gather(ring_reduce_scatter(vectors))
    return gathered


def all_reduce_average(vectors) -> list[np.ndarray]:
    summed = ring_all_reduce(vectors)
    scale = 1.0 / len(summed)
    return [v * scale for v in summed]


@dataclass
class SgdState:
    weights: np.ndarray
    learning_rate: float

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")


def sgd_step(states: list[SgdState], local_gradients) -> list[SgdState]:
    """One synchronous data-parallel SGD step with ring-averaged gradients."""
    if len(states) != len(local_gradients):
        raise ValueError(f"{len(states)} workers but {len(local_gradients)} gradients")
    reference = states[0].weights
    for s in states[1:]:
        if s.weights.shape != reference.shape or not np.array_equal(s.weights, reference):
            raise ReplicaDivergenceError("replica divergence")
    mean = all_reduce_average(local_gradients)
    return [SgdState(s.weights - s.learning_rate * g, s.learning_rate) for s, g in zip(states, mean)]
