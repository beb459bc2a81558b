"""Simulation and analysis of communication scheduling for data-parallel training.

Covers wait-free backpropagation (plain and fused), priority scheduling with tensor
partitioning, and decoupled reduce-scatter/all-gather pipelining, on top of an
alpha-beta ring-collective cost model.
"""

from .analysis import (
    Breakdown,
    SpeedupReport,
    breakdown,
    compare_policies,
    max_speedup,
    theoretical_gap,
    theoretical_times,
)
from .cost import (
    all_gather_time,
    all_reduce_time,
    calibrate_alpha_beta,
    partitioned_all_reduce_time,
    reduce_scatter_time,
    ten_gbe_cluster,
)
from .model import (
    MB,
    ClusterSpec,
    FusionPlan,
    LayerSpec,
    ModelSpec,
    PolicyKind,
    PolicySpec,
    build_fusion_plan,
    preset_model,
)
from .sim import Timeline, TaskGraph, build_graph, iteration_time, simulate, throughput

__version__ = "0.1.0"

__all__ = [
    "Breakdown",
    "ClusterSpec",
    "FusionPlan",
    "LayerSpec",
    "MB",
    "ModelSpec",
    "PolicyKind",
    "PolicySpec",
    "SpeedupReport",
    "TaskGraph",
    "Timeline",
    "all_gather_time",
    "all_reduce_time",
    "breakdown",
    "build_fusion_plan",
    "build_graph",
    "calibrate_alpha_beta",
    "compare_policies",
    "iteration_time",
    "max_speedup",
    "partitioned_all_reduce_time",
    "preset_model",
    "reduce_scatter_time",
    "simulate",
    "ten_gbe_cluster",
    "theoretical_gap",
    "theoretical_times",
    "throughput",
]
