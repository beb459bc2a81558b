"""Domain types shared across the simulator: cluster, model, fusion plan and policy.

Sizes are bytes, durations are seconds. ``MB`` is the decimal megabyte used for
buffer sizes and the calibration measurements.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

MB = 1_000_000
KB = 1_000


@dataclass(frozen=True)
class ClusterSpec:
    """P identical workers joined by links with startup latency ``alpha``
    (seconds per message) and transfer time ``beta`` (seconds per byte)."""

    workers: int
    alpha: float
    beta: float
    name: str = "cluster"

    def __post_init__(self) -> None:
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ValueError(f"workers must be a positive integer, got {self.workers!r}")
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha!r}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta!r}")

    @property
    def bandwidth(self) -> float:
        """Bytes per second (inf when ``beta`` is 0)."""
        return math.inf if self.beta == 0 else 1.0 / self.beta


@dataclass(frozen=True)
class LayerSpec:
    index: int
    param_count: int
    t_ff: float
    t_bp: float
    bytes_per_element: int = 4

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError(f"layer index must be >= 1, got {self.index}")
        if self.param_count < 0:
            raise ValueError(f"layer {self.index}: param_count must be >= 0")
        if self.bytes_per_element < 1:
            raise ValueError(f"layer {self.index}: bytes_per_element must be positive")
        if not (self.t_ff >= 0 and self.t_bp >= 0):
            raise ValueError(f"layer {self.index}: compute times must be >= 0")

    @property
    def nbytes(self) -> int:
        return self.param_count * self.bytes_per_element


@dataclass(frozen=True)
class ModelSpec:
    """Ordered learnable layers; ``layers[i].index == i + 1``."""

    name: str
    layers: tuple[LayerSpec, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        for pos, layer in enumerate(self.layers, start=1):
            if layer.index != pos:
                raise ValueError(
                    f"model {self.name!r}: layer indices must be 1..L without gaps, "
                    f"found {layer.index} at position {pos}"
                )

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def total_params(self) -> int:
        return sum(layer.param_count for layer in self.layers)

    @property
    def total_bytes(self) -> int:
        return sum(layer.nbytes for layer in self.layers)

    @property
    def total_ff(self) -> float:
        return math.fsum(layer.t_ff for layer in self.layers)

    @property
    def total_bp(self) -> float:
        return math.fsum(layer.t_bp for layer in self.layers)

    def layer(self, index: int) -> LayerSpec:
        return self.layers[index - 1]

    @classmethod
    def uniform(
        cls,
        num_layers: int,
        param_count: int,
        t_ff: float,
        t_bp: float,
        name: str = "uniform",
        bytes_per_element: int = 4,
    ) -> ModelSpec:
        return cls(
            name,
            tuple(
                LayerSpec(i, param_count, t_ff, t_bp, bytes_per_element)
                for i in range(1, num_layers + 1)
            ),
        )


@dataclass(frozen=True)
class FusionPlan:
    """Contiguous layer groups in BP issue order (highest layer index first).

    Each group is stored as ``(low, high)`` inclusive.
    """

    groups: tuple[tuple[int, int], ...]
    buffer_bytes: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "groups", tuple((int(lo), int(hi)) for lo, hi in self.groups))
        expected_high = None
        for lo, hi in self.groups:
            if lo > hi:
                raise ValueError(f"group ({lo}, {hi}) is empty")
            if expected_high is not None and hi != expected_high:
                raise ValueError("groups must be contiguous and ordered from the last layer down")
            expected_high = lo - 1
        if self.groups and self.groups[-1][0] != 1:
            raise ValueError("groups must cover layer 1")

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    def layers_of(self, group: int) -> range:
        lo, hi = self.groups[group]
        return range(lo, hi + 1)

    def group_of_layer(self) -> dict[int, int]:
        return {layer: g for g in range(len(self.groups)) for layer in self.layers_of(g)}

    def group_bytes(self, model: ModelSpec) -> list[int]:
        return [sum(model.layer(i).nbytes for i in self.layers_of(g)) for g in range(len(self.groups))]

    def covers(self, model: ModelSpec) -> bool:
        return bool(self.groups) and self.groups[0][1] == model.num_layers

    @classmethod
    def per_layer(cls, model: ModelSpec) -> FusionPlan:
        return cls(tuple((i, i) for i in range(model.num_layers, 0, -1)))


def build_fusion_plan(model: ModelSpec, buffer_bytes: int) -> FusionPlan:
    """Greedily pack layers from the last one down while the group fits in ``buffer_bytes``.

    A layer larger than the buffer gets a group of its own.
    """
    if model.num_layers == 0:
        raise ValueError("empty model")
    if buffer_bytes <= 0:
        raise ValueError(f"buffer_bytes must be positive, got {buffer_bytes}")

    groups: list[tuple[int, int]] = []
    high = model.num_layers
    acc = 0
    for index in range(model.num_layers, 0, -1):
        size = model.layer(index).nbytes
        if index != high and acc + size > buffer_bytes:
            groups.append((index + 1, high))
            high = index
            acc = 0
        acc += size
    groups.append((1, high))
    return FusionPlan(tuple(groups), buffer_bytes)


class PolicyKind(str, enum.Enum):
    WFBP = "WFBP"
    WFBP_FUSED = "WFBP_FUSED"
    PRIORITY_PARTITION = "PRIORITY_PARTITION"
    DEAR = "DEAR"
    DEAR_FUSED = "DEAR_FUSED"

    @property
    def fused(self) -> bool:
        return self in (PolicyKind.WFBP_FUSED, PolicyKind.DEAR_FUSED)

    @property
    def decoupled(self) -> bool:
        return self in (PolicyKind.DEAR, PolicyKind.DEAR_FUSED)


@dataclass(frozen=True)
class PolicySpec:
    """Communication scheduling policy.

    ``op1_barrier`` selects the global reduce-scatter barrier for DeAR kinds; when
    False each all-gather waits only for its own group's reduce-scatter.
    ``negotiation_on_comm`` places PRIORITY_PARTITION negotiations on the
    communication stream; when False they are free-floating latency.
    """

    kind: PolicyKind
    fusion_buffer_bytes: int | None = None
    partition_bytes: int | None = None
    negotiation_rounds: int = 1
    op1_barrier: bool = True
    negotiation_on_comm: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.kind.fused and not (self.fusion_buffer_bytes and self.fusion_buffer_bytes > 0):
            raise ValueError(f"{self.kind.value} requires fusion_buffer_bytes > 0")
        if self.kind is PolicyKind.PRIORITY_PARTITION and not (
            self.partition_bytes and self.partition_bytes > 0
        ):
            raise ValueError("PRIORITY_PARTITION requires partition_bytes > 0")
        if self.negotiation_rounds < 0:
            raise ValueError("negotiation_rounds must be >= 0")

    @property
    def label(self) -> str:
        if self.kind.fused:
            return f"{self.kind.value}({self.fusion_buffer_bytes / MB:g}MB)"
        if self.kind is PolicyKind.PRIORITY_PARTITION:
            return f"{self.kind.value}({self.partition_bytes / MB:g}MB)"
        return self.kind.value


# name -> (learnable tensors, parameters) from the benchmark-model table
PRESETS: dict[str, tuple[int, int]] = {
    "resnet50": (161, 25_600_000),
    "densenet201": (604, 20_000_000),
    "inceptionv4": (449, 42_700_000),
    "bert_base": (206, 110_100_000),
    "bert_large": (398, 336_200_000),
}

PROFILES = ("uniform", "imbalanced")


def _spread(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + 1 if i < extra else base for i in range(parts)]


def preset_param_counts(name: str, profile: str = "uniform") -> list[int]:
    """Per-layer parameter counts, layer 1 first."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; valid presets: {', '.join(sorted(PRESETS))}")
    num_layers, total = PRESETS[name]
    if profile == "uniform":
        return _spread(total, num_layers)
    if profile == "imbalanced":
        # 80% of the parameters live in the last 20% of the layers
        tail_layers = max(1, round(0.2 * num_layers))
        tail_params = round(0.8 * total)
        return _spread(total - tail_params, num_layers - tail_layers) + _spread(tail_params, tail_layers)
    raise ValueError(f"unknown profile {profile!r}; valid profiles: {', '.join(PROFILES)}")


def preset_model(
    name: str,
    total_ff_seconds: float,
    bp_to_ff_ratio: float = 2.0,
    profile: str = "uniform",
    bytes_per_element: int = 4,
) -> ModelSpec:
    """Synthetic layer profile for one of the benchmark models.

    Parameter totals and tensor counts are the published ones; the per-layer split
    follows ``profile`` and FF time is spread evenly across layers.
    """
    counts = preset_param_counts(name, profile)
    if not total_ff_seconds > 0:
        raise ValueError("total_ff_seconds must be positive")
    if not bp_to_ff_ratio > 0:
        raise ValueError("bp_to_ff_ratio must be positive")
    t_ff = total_ff_seconds / len(counts)
    layers = tuple(
        LayerSpec(i, count, t_ff, bp_to_ff_ratio * t_ff, bytes_per_element)
        for i, count in enumerate(counts, start=1)
    )
    return ModelSpec(name, layers)


__all__ = [
    "KB",
    "MB",
    "ClusterSpec",
    "FusionPlan",
    "LayerSpec",
    "ModelSpec",
    "PolicyKind",
    "PolicySpec",
    "PRESETS",
    "PROFILES",
    "build_fusion_plan",
    "preset_model",
    "preset_param_counts",
]
