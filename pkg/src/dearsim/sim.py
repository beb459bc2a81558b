"""Task graphs for one steady-state training iteration and their list-scheduled timelines.

An iteration is BP of iteration ``i``, the gradient communications of ``i`` and FF of
iteration ``i + 1``. A single representative worker owns one compute stream and one
communication stream; collective durations already account for the worker count.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, replace
from typing import Iterable

from . import cost
from .model import ClusterSpec, FusionPlan, ModelSpec, PolicyKind, PolicySpec, build_fusion_plan


class TaskKind(str, enum.Enum):
    FF = "FF"
    BP = "BP"
    RS = "RS"
    AG = "AG"
    AR = "AR"
    NEGOTIATE = "NEGOTIATE"
    BARRIER = "BARRIER"

    @property
    def is_compute(self) -> bool:
        return self in (TaskKind.FF, TaskKind.BP)


class Resource(str, enum.Enum):
    COMPUTE = "Compute"
    COMM = "Comm"
    # unbounded pseudo-resource for free-floating negotiation latency
    LATENCY = "Latency"


@dataclass(frozen=True)
class Task:
    id: int
    kind: TaskKind
    subject: int
    duration: float
    deps: tuple[int, ...]
    resource: Resource
    priority: tuple
    label: str
    layers: tuple[int, ...] = ()
    nbytes: float = 0.0
    part: int = 0


@dataclass(frozen=True)
class TaskGraph:
    tasks: tuple[Task, ...]
    policy: PolicySpec
    model: ModelSpec
    plan: FusionPlan | None = None

    def by_kind(self, *kinds: TaskKind) -> list[Task]:
        return [t for t in self.tasks if t.kind in kinds]

    def total_duration(self, *kinds: TaskKind) -> float:
        return math.fsum(t.duration for t in self.tasks if t.kind in kinds)


class CycleError(ValueError):
    def __init__(self, task_ids: Iterable[int]):
        self.task_ids = sorted(task_ids)
        super().__init__(f"task graph has a cycle through tasks {self.task_ids}")


class _Builder:
    def __init__(self) -> None:
        self.tasks: list[Task] = []

    def add(self, kind, subject, duration, deps, resource, priority, label, **extra) -> int:
        tid = len(self.tasks)
        self.tasks.append(
            Task(tid, kind, subject, float(duration), tuple(deps), resource, priority, label, **extra)
        )
        return tid


def build_graph(model: ModelSpec, policy: PolicySpec, cluster: ClusterSpec, plan: FusionPlan | None = None) -> TaskGraph:
    """Emit the compute/communication DAG for ``policy``.

    Fused kinds use ``plan`` when given, otherwise a plan built from the policy's
    buffer size. DeAR kinds without fusion communicate one group per layer.
    """
    if model.num_layers == 0:
        raise ValueError("empty model")
    kind = policy.kind
    if kind.fused:
        if plan is None:
            plan = build_fusion_plan(model, policy.fusion_buffer_bytes)
        elif not plan.covers(model):
            raise ValueError("fusion plan does not cover the model")
    elif kind in (PolicyKind.WFBP, PolicyKind.DEAR):
        plan = FusionPlan.per_layer(model)
    else:
        plan = None

    b = _Builder()
    num_layers = model.num_layers
    bp_ids: dict[int, int] = {}
    prev = None
    for layer in range(num_layers, 0, -1):
        spec = model.layer(layer)
        bp_ids[layer] = b.add(
            TaskKind.BP, layer, spec.t_bp, [] if prev is None else [prev],
            Resource.COMPUTE, (0, -layer), f"BP {layer}", layers=(layer,),
        )
        prev = bp_ids[layer]

    # layer -> communication task ids its FF must wait for
    ff_waits: dict[int, list[int]] = {layer: [] for layer in range(1, num_layers + 1)}

    if kind in (PolicyKind.WFBP, PolicyKind.WFBP_FUSED):
        _add_all_reduce_groups(b, model, plan, cluster, bp_ids, ff_waits)
    elif kind.decoupled:
        _add_decoupled_groups(b, model, plan, cluster, bp_ids, ff_waits, policy.op1_barrier)
    else:
        _add_priority_partitions(b, model, policy, cluster, bp_ids, ff_waits)

    prev = None
    for layer in range(1, num_layers + 1):
        spec = model.layer(layer)
        deps = ff_waits[layer] + ([] if prev is None else [prev])
        prev = b.add(
            TaskKind.FF, layer, spec.t_ff, deps, Resource.COMPUTE, (1, layer), f"FF {layer}",
            layers=(layer,),
        )
    return TaskGraph(tuple(b.tasks), policy, model, plan)


def _group_label(plan: FusionPlan, g: int, kind: TaskKind) -> str:
    lo, hi = plan.groups[g]
    if plan.buffer_bytes == 0 and lo == hi:
        return f"{kind.value} {lo}"
    return f"{kind.value} g{g + 1}"


def _add_all_reduce_groups(b, model, plan, cluster, bp_ids, ff_waits) -> None:
    for g, nbytes in enumerate(plan.group_bytes(model)):
        layers = tuple(plan.layers_of(g))
        lo, hi = plan.groups[g]
        tid = b.add(
            TaskKind.AR, g, cost.all_reduce_time(nbytes, cluster), [bp_ids[i] for i in layers],
            Resource.COMM, (0, -hi), _group_label(plan, g, TaskKind.AR), layers=layers, nbytes=nbytes,
        )
        for i in layers:
            ff_waits[i].append(tid)


def _add_decoupled_groups(b, model, plan, cluster, bp_ids, ff_waits, barrier: bool) -> None:
    group_bytes = plan.group_bytes(model)
    rs_ids = []
    for g, nbytes in enumerate(group_bytes):
        layers = tuple(plan.layers_of(g))
        lo, hi = plan.groups[g]
        rs_ids.append(b.add(
            TaskKind.RS, g, cost.reduce_scatter_time(nbytes, cluster), [bp_ids[i] for i in layers],
            Resource.COMM, (0, -hi), _group_label(plan, g, TaskKind.RS), layers=layers, nbytes=nbytes,
        ))
    barrier_id = None
    if barrier:
        barrier_id = b.add(TaskKind.BARRIER, 0, 0.0, rs_ids, Resource.COMM, (1, 0), "BARRIER")
    for g, nbytes in enumerate(group_bytes):
        layers = tuple(plan.layers_of(g))
        lo, hi = plan.groups[g]
        deps = [barrier_id] if barrier else [rs_ids[g]]
        tid = b.add(
            TaskKind.AG, g, cost.all_gather_time(nbytes, cluster), deps,
            Resource.COMM, (2, lo), _group_label(plan, g, TaskKind.AG), layers=layers, nbytes=nbytes,
        )
        for i in layers:
            ff_waits[i].append(tid)


def _add_priority_partitions(b, model, policy, cluster, bp_ids, ff_waits) -> None:
    neg_time = policy.negotiation_rounds * cost.startup_time(cluster)
    neg_resource = Resource.COMM if policy.negotiation_on_comm else Resource.LATENCY
    for layer in range(model.num_layers, 0, -1):
        nbytes = model.layer(layer).nbytes
        n_parts = max(1, math.ceil(nbytes / policy.partition_bytes))
        part_bytes = nbytes / n_parts
        for part in range(n_parts):
            tag = f"{layer}.{part + 1}" if n_parts > 1 else f"{layer}"
            neg = b.add(
                TaskKind.NEGOTIATE, layer, neg_time, [bp_ids[layer]], neg_resource,
                (layer, part, 0), f"NEG {tag}", layers=(layer,), part=part,
            )
            ar = b.add(
                TaskKind.AR, layer, cost.all_reduce_time(part_bytes, cluster), [neg],
                Resource.COMM, (layer, part, 1), f"AR {tag}", layers=(layer,), nbytes=part_bytes, part=part,
            )
            ff_waits[layer].append(ar)


def zero_durations(graph: TaskGraph, *kinds: TaskKind) -> TaskGraph:
    """Same topology with the given task kinds made free (e.g. an RS-only variant zeroes AG)."""
    tasks = tuple(replace(t, duration=0.0) if t.kind in kinds else t for t in graph.tasks)
    return replace(graph, tasks=tasks)


@dataclass(frozen=True)
class Event:
    task_id: int
    resource: Resource
    start: float
    end: float


@dataclass(frozen=True)
class Timeline:
    events: tuple[Event, ...]
    iteration_seconds: float
    graph: TaskGraph

    def event(self, task_id: int) -> Event:
        ev = self.events[task_id]
        assert ev.task_id == task_id
        return ev

    def check(self) -> None:
        """Raise AssertionError if any timeline invariant is violated."""
        tasks = self.graph.tasks
        assert len(self.events) == len(tasks)
        for ev in self.events:
            task = tasks[ev.task_id]
            assert ev.end - ev.start == task.duration or math.isclose(
                ev.end - ev.start, task.duration, rel_tol=1e-12, abs_tol=1e-15
            ), f"{task.label}: event length differs from duration"
            for dep in task.deps:
                assert ev.start >= self.events[dep].end, f"{task.label} starts before dependency {tasks[dep].label}"
        for resource in (Resource.COMPUTE, Resource.COMM):
            spans = sorted((e.start, e.end) for e in self.events if e.resource is resource)
            for (s0, e0), (s1, e1) in zip(spans, spans[1:]):
                assert s1 >= e0, f"overlap on {resource.value}: [{s0}, {e0}] and [{s1}, {e1}]"
        makespan = max((e.end for e in self.events), default=0.0)
        assert self.iteration_seconds == makespan

    def busy_seconds(self, resource: Resource) -> float:
        return math.fsum(e.end - e.start for e in self.events if e.resource is resource)


def _check_acyclic(tasks: tuple[Task, ...]) -> list[list[int]]:
    succ: list[list[int]] = [[] for _ in tasks]
    indeg = [0] * len(tasks)
    for t in tasks:
        for d in t.deps:
            if not 0 <= d < len(tasks):
                raise ValueError(f"task {t.id} depends on unknown task {d}")
            succ[d].append(t.id)
            indeg[t.id] += 1
    remaining = indeg[:]
    stack = [i for i, n in enumerate(remaining) if n == 0]
    seen = 0
    while stack:
        i = stack.pop()
        seen += 1
        for j in succ[i]:
            remaining[j] -= 1
            if remaining[j] == 0:
                stack.append(j)
    if seen != len(tasks):
        raise CycleError(i for i, n in enumerate(remaining) if n > 0)
    return succ


def simulate(graph: TaskGraph, cluster: ClusterSpec | None = None) -> Timeline:
    """Non-preemptive list scheduling on one compute and one communication stream.

    Whenever a stream is idle it starts the ready task with the smallest
    ``(priority, id)``. ``cluster`` is accepted for symmetry with ``build_graph``;
    durations are already baked into the graph.
    """
    tasks = graph.tasks
    succ = _check_acyclic(tasks)
    pending = [len(t.deps) for t in tasks]
    ready: dict[Resource, list] = {r: [] for r in Resource}
    busy = {r: False for r in Resource}
    running: list[tuple[float, int]] = []
    starts = [0.0] * len(tasks)
    ends = [0.0] * len(tasks)

    for t in tasks:
        if pending[t.id] == 0:
            heapq.heappush(ready[t.resource], (t.priority, t.id))

    now = 0.0
    done = 0
    while True:
        for resource in (Resource.COMPUTE, Resource.COMM):
            if not busy[resource] and ready[resource]:
                _, tid = heapq.heappop(ready[resource])
                busy[resource] = True
                starts[tid] = now
                heapq.heappush(running, (now + tasks[tid].duration, tid))
        while ready[Resource.LATENCY]:
            _, tid = heapq.heappop(ready[Resource.LATENCY])
            starts[tid] = now
            heapq.heappush(running, (now + tasks[tid].duration, tid))
        if not running:
            break
        now = running[0][0]
        while running and running[0][0] == now:
            _, tid = heapq.heappop(running)
            ends[tid] = now
            done += 1
            if tasks[tid].resource is not Resource.LATENCY:
                busy[tasks[tid].resource] = False
            for j in succ[tid]:
                pending[j] -= 1
                if pending[j] == 0:
                    heapq.heappush(ready[tasks[j].resource], (tasks[j].priority, j))

    assert done == len(tasks)
    events = tuple(Event(t.id, t.resource, starts[t.id], ends[t.id]) for t in tasks)
    return Timeline(events, max(ends, default=0.0), graph)


def iteration_time(model: ModelSpec, policy: PolicySpec, cluster: ClusterSpec) -> float:
    return simulate(build_graph(model, policy, cluster)).iteration_seconds


def throughput(model: ModelSpec, policy: PolicySpec, cluster: ClusterSpec, samples_per_iteration: float) -> float:
    """Training samples per second of simulated wall time."""
    if not samples_per_iteration > 0:
        raise ValueError("samples_per_iteration must be positive")
    return samples_per_iteration / iteration_time(model, policy, cluster)
