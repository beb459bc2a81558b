import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_force_makespan, cluster_for, random_scenario
from dearsim import cost
from dearsim.model import MB, ClusterSpec, FusionPlan, LayerSpec, ModelSpec, PolicyKind, PolicySpec
from dearsim.sim import (
    CycleError,
    Resource,
    Task,
    TaskGraph,
    TaskKind,
    build_graph,
    iteration_time,
    simulate,
    throughput,
    zero_durations,
)

WFBP = PolicySpec(PolicyKind.WFBP)
DEAR = PolicySpec(PolicyKind.DEAR)


def spans(timeline):
    return {timeline.graph.tasks[e.task_id].label: (e.start, e.end) for e in timeline.events}


def all_policies(buffer=25 * MB, partition=4 * MB):
    return [
        PolicySpec(PolicyKind.WFBP),
        PolicySpec(PolicyKind.WFBP_FUSED, fusion_buffer_bytes=buffer),
        PolicySpec(PolicyKind.DEAR),
        PolicySpec(PolicyKind.DEAR_FUSED, fusion_buffer_bytes=buffer),
        PolicySpec(PolicyKind.PRIORITY_PARTITION, partition_bytes=partition),
    ]


# hand-derived schedules for t_ff=1, t_bp=2 per layer

def test_two_layer_wfbp_golden(two_layer):
    tl = simulate(build_graph(two_layer, WFBP, cluster_for(1.0)))
    tl.check()
    assert spans(tl) == {
        "BP 2": (0, 2), "AR 2": (2, 4), "BP 1": (2, 4), "AR 1": (4, 6), "FF 1": (6, 7), "FF 2": (7, 8),
    }
    assert tl.iteration_seconds == 8


def test_two_layer_dear_golden(two_layer):
    tl = simulate(build_graph(two_layer, DEAR, cluster_for(1.0)))
    tl.check()
    assert spans(tl) == {
        "BP 2": (0, 2), "RS 2": (2, 3), "BP 1": (2, 4), "RS 1": (4, 5), "BARRIER": (5, 5),
        "AG 1": (5, 6), "FF 1": (6, 7), "AG 2": (6, 7), "FF 2": (7, 8),
    }
    # both schedules share an 8-unit critical path through BP, layer-1 communication and FF
    assert tl.iteration_seconds == 8


def test_two_layer_comm_bound_dear_wins(two_layer):
    c = cluster_for(2.0)
    wfbp = simulate(build_graph(two_layer, WFBP, c))
    dear = simulate(build_graph(two_layer, DEAR, c))
    assert spans(wfbp)["AR 1"] == (6, 10)
    assert wfbp.iteration_seconds == 12
    assert spans(dear)["AG 2"] == (8, 10)
    assert dear.iteration_seconds == 11
    assert dear.iteration_seconds < wfbp.iteration_seconds


@pytest.mark.parametrize("t_rs", [0.0, 0.5, 1.0, 2.0, 3.0])
@pytest.mark.parametrize("kind", [PolicyKind.WFBP, PolicyKind.DEAR])
def test_two_layer_matches_brute_force_optimum(two_layer, t_rs, kind):
    graph = build_graph(two_layer, PolicySpec(kind), cluster_for(t_rs))
    assert simulate(graph).iteration_seconds == pytest.approx(brute_force_makespan(graph), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.sampled_from([PolicyKind.WFBP, PolicyKind.DEAR]))
def test_small_graphs_never_beat_brute_force(seed, kind):
    rng = random.Random(seed)
    model, cluster = random_scenario(rng, 2, 3)
    graph = build_graph(model, PolicySpec(kind), cluster)
    best = brute_force_makespan(graph)
    assert simulate(graph).iteration_seconds >= best - 1e-12


def test_graph_shape_wfbp(two_layer):
    g = build_graph(two_layer, WFBP, cluster_for(1.0))
    assert [t.label for t in g.tasks] == ["BP 2", "BP 1", "AR 2", "AR 1", "FF 1", "FF 2"]
    ar2 = g.tasks[2]
    assert ar2.deps == (0,) and ar2.resource is Resource.COMM
    assert g.tasks[4].deps == (3,)
    assert set(g.tasks[5].deps) == {2, 4}


def test_graph_shape_dear_fused():
    model = ModelSpec.uniform(4, 250_000, 1.0, 2.0)  # 1 MB per layer
    g = build_graph(model, PolicySpec(PolicyKind.DEAR_FUSED, fusion_buffer_bytes=2 * MB), cluster_for(1.0))
    rs = g.by_kind(TaskKind.RS)
    ag = g.by_kind(TaskKind.AG)
    (barrier,) = g.by_kind(TaskKind.BARRIER)
    assert [t.layers for t in rs] == [(3, 4), (1, 2)]
    assert set(barrier.deps) == {t.id for t in rs}
    assert all(t.deps == (barrier.id,) for t in ag)
    assert g.plan.groups == ((3, 4), (1, 2))


def test_barrier_flag_off_links_each_all_gather_to_its_reduce_scatter(two_layer):
    policy = PolicySpec(PolicyKind.DEAR, op1_barrier=False)
    g = build_graph(two_layer, policy, cluster_for(1.0))
    assert not g.by_kind(TaskKind.BARRIER)
    rs = {t.subject: t.id for t in g.by_kind(TaskKind.RS)}
    for t in g.by_kind(TaskKind.AG):
        assert t.deps == (rs[t.subject],)
    simulate(g).check()


def test_priority_partition_shape():
    # one 10 MB layer over 4 MB partitions -> 3 parts of 10/3 MB
    model = ModelSpec("one", (LayerSpec(1, 2_500_000, 1.0, 2.0),))
    c = ClusterSpec(8, 1e-4, 1e-9)
    policy = PolicySpec(PolicyKind.PRIORITY_PARTITION, partition_bytes=4 * MB, negotiation_rounds=2)
    g = build_graph(model, policy, c)
    ars = g.by_kind(TaskKind.AR)
    negs = g.by_kind(TaskKind.NEGOTIATE)
    assert len(ars) == len(negs) == 3
    assert [t.label for t in ars] == ["AR 1.1", "AR 1.2", "AR 1.3"]
    assert all(t.nbytes == pytest.approx(10 * MB / 3) for t in ars)
    assert all(t.duration == pytest.approx(2 * 2 * 7 * 1e-4) for t in negs)
    comm = g.total_duration(TaskKind.AR, TaskKind.NEGOTIATE)
    expected = cost.partitioned_all_reduce_time(10 * MB, 3, c) + 3 * 2 * cost.startup_time(c)
    assert comm == pytest.approx(expected, rel=1e-12)


def test_negotiation_off_comm_stream_overlaps():
    model = ModelSpec.uniform(3, 1_000_000, 1.0, 2.0)
    c = ClusterSpec(8, 1e-3, 1e-9)
    on = PolicySpec(PolicyKind.PRIORITY_PARTITION, partition_bytes=MB)
    off = PolicySpec(PolicyKind.PRIORITY_PARTITION, partition_bytes=MB, negotiation_on_comm=False)
    tl_on, tl_off = simulate(build_graph(model, on, c)), simulate(build_graph(model, off, c))
    tl_on.check()
    tl_off.check()
    assert all(t.resource is Resource.LATENCY for t in tl_off.graph.by_kind(TaskKind.NEGOTIATE))
    assert tl_off.iteration_seconds <= tl_on.iteration_seconds


def test_single_worker_is_pure_compute():
    model = ModelSpec.uniform(20, 100_000, 0.01, 0.02)
    c = ClusterSpec(1, 1e-3, 1e-9)
    for policy in all_policies():
        assert iteration_time(model, policy, c) == pytest.approx(model.total_ff + model.total_bp, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_free_communication_costs_nothing(seed):
    model, _ = random_scenario(random.Random(seed), 1, 60, ratio=(0.1, 5.0))
    free = ClusterSpec(16, 0.0, 0.0)
    for policy in all_policies(buffer=MB, partition=MB):
        assert iteration_time(model, policy, free) == pytest.approx(model.total_ff + model.total_bp, rel=1e-12)


def test_single_group_wfbp_fused_is_serial():
    model = ModelSpec.uniform(10, 100_000, 0.01, 0.02)
    c = ClusterSpec(16, 1e-4, 1e-9)
    policy = PolicySpec(PolicyKind.WFBP_FUSED, fusion_buffer_bytes=10 * model.total_bytes)
    expected = model.total_bp + cost.all_reduce_time(model.total_bytes, c) + model.total_ff
    assert iteration_time(model, policy, c) == pytest.approx(expected, rel=1e-12)


def test_single_group_dear_fused_is_serial():
    model = ModelSpec.uniform(10, 100_000, 0.01, 0.02)
    c = ClusterSpec(16, 1e-4, 1e-9)
    policy = PolicySpec(PolicyKind.DEAR_FUSED, fusion_buffer_bytes=10 * model.total_bytes)
    expected = model.total_bp + cost.all_reduce_time(model.total_bytes, c) + model.total_ff
    assert iteration_time(model, policy, c) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.integers(min_value=0, max_value=4))
def test_timelines_are_consistent(seed, which):
    rng = random.Random(seed)
    model, cluster = random_scenario(rng, 1, 80, ratio=(0.2, 4.0))
    policy = all_policies(buffer=rng.choice([MB, 4 * MB, 25 * MB]), partition=rng.choice([MB, 4 * MB]))[which]
    graph = build_graph(model, policy, cluster)
    tl = simulate(graph)
    tl.check()
    # lower bounds: compute chain and communication stream
    assert tl.iteration_seconds >= model.total_ff + model.total_bp - 1e-12
    assert tl.iteration_seconds >= tl.busy_seconds(Resource.COMM) - 1e-12
    assert tl.busy_seconds(Resource.COMPUTE) == pytest.approx(model.total_ff + model.total_bp, rel=1e-12)
    # deterministic
    assert simulate(graph) == tl


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_fused_communication_never_exceeds_unfused(seed):
    rng = random.Random(seed)
    model, cluster = random_scenario(rng, 1, 80)
    buffer = rng.choice([MB, 4 * MB, 25 * MB])
    for plain, fused in ((PolicyKind.WFBP, PolicyKind.WFBP_FUSED), (PolicyKind.DEAR, PolicyKind.DEAR_FUSED)):
        g0 = build_graph(model, PolicySpec(plain), cluster)
        g1 = build_graph(model, PolicySpec(fused, fusion_buffer_bytes=buffer), cluster)
        kinds = (TaskKind.AR, TaskKind.RS, TaskKind.AG)
        assert g1.total_duration(*kinds) <= g0.total_duration(*kinds) * (1 + 1e-12)


def test_dear_fused_hides_communication_on_a_long_model():
    # 200 layers, 0.5 MB each; communication much shorter than compute
    model = ModelSpec.uniform(200, 125_000, 1e-3, 2e-3)
    c = cost.ten_gbe_cluster(16)
    policy = PolicySpec(PolicyKind.DEAR_FUSED, fusion_buffer_bytes=25 * MB)
    t = iteration_time(model, policy, c)
    assert t <= 1.05 * (model.total_ff + model.total_bp)


def test_throughput_scales_with_samples():
    model = ModelSpec.uniform(10, 100_000, 0.01, 0.02)
    c = ClusterSpec(4, 1e-4, 1e-9)
    t = iteration_time(model, DEAR, c)
    assert throughput(model, DEAR, c, 256) == pytest.approx(256 / t)
    assert throughput(model, DEAR, c, 512) == pytest.approx(2 * throughput(model, DEAR, c, 256))
    with pytest.raises(ValueError):
        throughput(model, DEAR, c, 0)


def test_dear_loses_when_backprop_dwarfs_feedforward():
    # outside bp <= 2 ff: layer 1's long BP hides WFBP's AR 2 but DeAR's barrier exposes AG 2
    model = ModelSpec("skew", (LayerSpec(1, 1, 0.1, 10.0, 1), LayerSpec(2, 1, 1.0, 1.0, 1)))
    c = cluster_for(3.0)
    wfbp = iteration_time(model, WFBP, c)
    dear = iteration_time(model, DEAR, c)
    assert wfbp == pytest.approx(1 + 10 + 6 + 0.1 + 1)
    assert dear > wfbp


def test_rs_only_and_ag_only_variants():
    model = ModelSpec.uniform(30, 500_000, 1e-3, 2e-3)
    c = cost.ten_gbe_cluster(64)
    g = build_graph(model, DEAR, c)
    rs_only = zero_durations(g, TaskKind.AG)
    assert rs_only.total_duration(TaskKind.AG) == 0
    assert rs_only.total_duration(TaskKind.RS) == g.total_duration(TaskKind.RS)
    for variant in (rs_only, zero_durations(g, TaskKind.RS)):
        simulate(variant).check()
        assert simulate(variant).iteration_seconds <= simulate(g).iteration_seconds + 1e-12


def test_cycle_is_reported():
    model = ModelSpec.uniform(1, 1, 1.0, 1.0)
    a = Task(0, TaskKind.BP, 1, 1.0, (1,), Resource.COMPUTE, (0,), "a")
    b = Task(1, TaskKind.FF, 1, 1.0, (0,), Resource.COMPUTE, (1,), "b")
    with pytest.raises(CycleError) as err:
        simulate(TaskGraph((a, b), WFBP, model))
    assert err.value.task_ids == [0, 1]


def test_fusion_plan_must_cover_model():
    model = ModelSpec.uniform(3, 1, 1.0, 1.0)
    bad = FusionPlan(((1, 2),), MB)
    with pytest.raises(ValueError):
        build_graph(model, PolicySpec(PolicyKind.DEAR_FUSED, fusion_buffer_bytes=MB), cluster_for(1.0), bad)


def test_empty_model_rejected():
    with pytest.raises(ValueError):
        build_graph(ModelSpec("e", ()), WFBP, cluster_for(1.0))


def test_iteration_time_matches_makespan():
    model = ModelSpec.uniform(5, 10_000, 0.1, 0.2)
    c = ClusterSpec(4, 1e-3, 1e-9)
    tl = simulate(build_graph(model, DEAR, c))
    assert tl.iteration_seconds == max(e.end for e in tl.events)
    assert math.isclose(iteration_time(model, DEAR, c), tl.iteration_seconds)
