"""Closed-form speedup bounds, ideal iteration times and timeline breakdowns."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from . import cost
from .model import ClusterSpec, ModelSpec, PolicySpec
from .sim import TaskGraph, TaskKind, Timeline, build_graph, simulate


def max_speedup(t_ff: float, t_bp: float, t_rs: float, t_ag: float, workers: int) -> float:
    """Upper bound on P-worker speedup when RS can hide under BP and AG under FF."""
    if min(t_ff, t_bp, t_rs, t_ag) < 0:
        raise ValueError("durations must be >= 0")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    # t_ar - min(t_rs, t_bp) - min(t_ag, t_ff), written so fully hidden comm gives exactly P
    denominator = t_ff + t_bp + max(t_rs - t_bp, 0.0) + max(t_ag - t_ff, 0.0)
    if denominator <= 0:
        raise ValueError("zero compute and zero communication: speedup undefined")
    return workers * ((t_ff + t_bp) / denominator)


def theoretical_times(t_ff: float, t_bp: float, t_rs: float, t_ag: float) -> tuple[float, float]:
    """Perfect-overlap iteration times ``(t_dear, t_baseline)``."""
    if min(t_ff, t_bp, t_rs, t_ag) < 0:
        raise ValueError("durations must be >= 0")
    t_dear = max(t_ff, t_ag) + max(t_bp, t_rs)
    t_baseline = t_ff + max(t_bp, t_rs + t_ag)
    return t_dear, t_baseline


def theoretical_gap(t_ff: float, t_ag: float) -> float:
    """``t_baseline - t_dear`` when BP costs twice FF and RS costs the same as AG."""
    if not t_ff > 0:
        raise ValueError("t_ff must be positive")
    if t_ag < 0:
        raise ValueError("t_ag must be >= 0")
    if t_ag <= t_ff:
        gap = 0.0
    elif t_ag <= 2 * t_ff:
        gap = t_ag - t_ff
    else:
        gap = t_ff
    t_dear, t_baseline = theoretical_times(t_ff, 2 * t_ff, t_ag, t_ag)
    assert math.isclose(t_baseline - t_dear, gap, rel_tol=1e-12, abs_tol=1e-12 * (t_ff + t_ag)), (
        f"closed form {gap} disagrees with {t_baseline - t_dear}"
    )
    return gap


@dataclass(frozen=True)
class Breakdown:
    ff_seconds: float
    bp_seconds: float
    exposed_comm_seconds: float
    iteration_seconds: float


def breakdown(timeline: Timeline, model: ModelSpec | None = None) -> Breakdown:
    """Split the makespan into FF, BP and communication not hidden by compute.

    Everything that is not FF or BP compute counts as exposed communication,
    including compute-stream bubbles spent waiting on communication.
    """
    model = model or timeline.graph.model
    ff, bp = model.total_ff, model.total_bp
    exposed = timeline.iteration_seconds - ff - bp
    # clamp float dust; a genuinely negative value means the timeline is broken
    if exposed < 0:
        if exposed < -1e-9 * max(1.0, timeline.iteration_seconds):
            raise ValueError("timeline is shorter than its compute work")
        exposed = 0.0
    return Breakdown(ff, bp, exposed, timeline.iteration_seconds)


@dataclass(frozen=True)
class CommTotals:
    t_rs: float
    t_ag: float

    @property
    def t_ar(self) -> float:
        return self.t_rs + self.t_ag


def comm_totals(graph: TaskGraph, cluster: ClusterSpec) -> CommTotals:
    """Reduce-scatter and all-gather cost of every communication unit in the graph.

    Negotiation latency is not part of the totals.
    """
    units = graph.by_kind(TaskKind.RS, TaskKind.AR)
    t_rs = math.fsum(cost.reduce_scatter_time(t.nbytes, cluster) for t in units)
    t_ag = math.fsum(cost.all_gather_time(t.nbytes, cluster) for t in units)
    return CommTotals(t_rs, t_ag)


@dataclass(frozen=True)
class SpeedupReport:
    """Simulated speedup of one policy against the bound for its model and cluster.

    ``t_rs``/``t_ag``/``t_ar`` are for the whole model sent as one message, the least
    communication any schedule can get away with; ``comm_seconds`` is the work the
    policy actually put on the communication stream.
    """

    policy: str
    workers: int
    t_ff: float
    t_bp: float
    t_rs: float
    t_ag: float
    t_ar: float
    comm_seconds: float
    iteration_seconds: float
    s_max: float
    simulated_speedup: float
    ratio: float


def speedup_report(model: ModelSpec, policy: PolicySpec, cluster: ClusterSpec) -> SpeedupReport:
    graph = build_graph(model, policy, cluster)
    timeline = simulate(graph)
    m = model.total_bytes
    t_rs = cost.reduce_scatter_time(m, cluster)
    t_ag = cost.all_gather_time(m, cluster)
    t_ff, t_bp = model.total_ff, model.total_bp
    s_max = max_speedup(t_ff, t_bp, t_rs, t_ag, cluster.workers)
    simulated = cluster.workers * (t_ff + t_bp) / timeline.iteration_seconds
    return SpeedupReport(
        policy=policy.label,
        workers=cluster.workers,
        t_ff=t_ff,
        t_bp=t_bp,
        t_rs=t_rs,
        t_ag=t_ag,
        t_ar=t_rs + t_ag,
        comm_seconds=graph.total_duration(TaskKind.RS, TaskKind.AG, TaskKind.AR, TaskKind.NEGOTIATE),
        iteration_seconds=timeline.iteration_seconds,
        s_max=s_max,
        simulated_speedup=simulated,
        ratio=simulated / s_max,
    )


def compare_policies(model: ModelSpec, cluster: ClusterSpec, policies: Sequence[PolicySpec]) -> list[SpeedupReport]:
    """One report per policy, in input order; speedups are over one worker running pure compute."""
    return [speedup_report(model, policy, cluster) for policy in policies]
