"""Experiment configuration: a JSON document with ``cluster``, ``model``, ``policy``/``policies`` and ``tuner`` sections.

Unknown keys are rejected so that typos fail loudly.

Example::

    {
      "cluster": {"preset": "10gbe", "workers": 64},
      "model": {"preset": "resnet50", "total_ff_seconds": 0.06, "profile": "uniform"},
      "policy": {"kind": "DEAR_FUSED", "fusion_buffer_bytes": 25000000},
      "tuner": {"method": "bo", "max_trials": 20, "seed": 0},
      "samples_per_iteration": 4096
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .autotune import GpHyperparams, TunerConfig
from .cost import ten_gbe_cluster
from .model import ClusterSpec, LayerSpec, ModelSpec, PolicySpec, preset_model


class ConfigError(ValueError):
    pass


TOP_LEVEL = {"cluster", "model", "policy", "policies", "tuner", "samples_per_iteration"}
CLUSTER_KEYS = {"preset", "workers", "alpha", "beta", "name"}
MODEL_PRESET_KEYS = {"preset", "total_ff_seconds", "bp_to_ff_ratio", "profile", "bytes_per_element"}
MODEL_EXPLICIT_KEYS = {"name", "layers"}
LAYER_KEYS = {"param_count", "t_ff", "t_bp", "bytes_per_element"}
POLICY_KEYS = {"kind", "fusion_buffer_bytes", "partition_bytes", "negotiation_rounds", "op1_barrier", "negotiation_on_comm"}
TUNER_KEYS = {
    "method", "lower_bytes", "upper_bytes", "xi", "init_buffer_bytes", "measure_steps",
    "max_trials", "seed", "lengthscale", "signal_variance", "noise_variance", "grid_points",
}
TUNER_METHODS = ("bo", "random", "grid")
CLUSTER_PRESETS = ("10gbe",)


def _check_keys(section: str, data: Any, allowed: set[str], required: set[str] = frozenset()) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be an object")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"section '{section}': unknown key(s) {', '.join(unknown)}")
    missing = sorted(required - set(data))
    if missing:
        raise ConfigError(f"section '{section}': missing key(s) {', '.join(missing)}")
    return data


def _wrap(section: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section '{section}': {exc}") from exc


def parse_cluster(data: Any) -> ClusterSpec:
    data = _check_keys("cluster", data, CLUSTER_KEYS)
    if "preset" in data:
        if data["preset"] not in CLUSTER_PRESETS:
            raise ConfigError(f"section 'cluster': unknown preset {data['preset']!r}; valid: {', '.join(CLUSTER_PRESETS)}")
        if "alpha" in data or "beta" in data:
            raise ConfigError("section 'cluster': give either a preset or alpha/beta, not both")
        return _wrap("cluster", ten_gbe_cluster, data.get("workers", 64))
    _check_keys("cluster", data, CLUSTER_KEYS, {"workers", "alpha", "beta"})
    return _wrap("cluster", ClusterSpec, data["workers"], float(data["alpha"]), float(data["beta"]), data.get("name", "cluster"))


def parse_model(data: Any) -> ModelSpec:
    if isinstance(data, dict) and "layers" in data:
        data = _check_keys("model", data, MODEL_EXPLICIT_KEYS, {"layers"})
        layers = []
        for i, layer in enumerate(data["layers"], start=1):
            layer = _check_keys(f"model.layers[{i - 1}]", layer, LAYER_KEYS, {"param_count", "t_ff", "t_bp"})
            layers.append(_wrap("model", LayerSpec, i, layer["param_count"], float(layer["t_ff"]),
                                float(layer["t_bp"]), layer.get("bytes_per_element", 4)))
        if not layers:
            raise ConfigError("section 'model': empty model")
        return ModelSpec(data.get("name", "custom"), tuple(layers))
    data = _check_keys("model", data, MODEL_PRESET_KEYS, {"preset", "total_ff_seconds"})
    return _wrap(
        "model", preset_model, data["preset"], float(data["total_ff_seconds"]),
        float(data.get("bp_to_ff_ratio", 2.0)), data.get("profile", "uniform"), data.get("bytes_per_element", 4),
    )


def parse_policy(data: Any, section: str = "policy") -> PolicySpec:
    data = _check_keys(section, data, POLICY_KEYS, {"kind"})
    return _wrap(section, PolicySpec, **data)


@dataclass(frozen=True)
class TunerSettings:
    method: str
    config: TunerConfig


def parse_tuner(data: Any) -> TunerSettings:
    data = _check_keys("tuner", data or {}, TUNER_KEYS)
    method = data.get("method", "bo")
    if method not in TUNER_METHODS:
        raise ConfigError(f"section 'tuner': unknown method {method!r}; valid: {', '.join(TUNER_METHODS)}")
    defaults = TunerConfig()
    hyper = _wrap("tuner", GpHyperparams,
                  float(data.get("lengthscale", defaults.hyper.lengthscale)),
                  float(data.get("signal_variance", defaults.hyper.signal_variance)),
                  float(data.get("noise_variance", defaults.hyper.noise_variance)))
    config = _wrap(
        "tuner", TunerConfig,
        lower=float(data.get("lower_bytes", defaults.lower)),
        upper=float(data.get("upper_bytes", defaults.upper)),
        xi=float(data.get("xi", defaults.xi)),
        init_buffer=float(data.get("init_buffer_bytes", defaults.init_buffer)),
        measure_steps=int(data.get("measure_steps", defaults.measure_steps)),
        max_trials=int(data.get("max_trials", defaults.max_trials)),
        seed=int(data.get("seed", defaults.seed)),
        hyper=hyper,
        grid_points=int(data.get("grid_points", defaults.grid_points)),
    )
    return TunerSettings(method, config)


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    cluster: ClusterSpec | None = None
    model: ModelSpec | None = None
    policy: PolicySpec | None = None
    policies: tuple[PolicySpec, ...] = ()
    tuner: TunerSettings | None = None
    samples_per_iteration: float = 1.0
    present: frozenset = field(default_factory=frozenset)

    def require(self, *sections: str) -> None:
        for section in sections:
            if section not in self.present:
                raise ConfigError(f"config is missing required section '{section}'")


def parse_config(data: Any) -> ExperimentConfig:
    data = _check_keys("<top level>", data, TOP_LEVEL)
    kwargs: dict[str, Any] = {"raw": data, "present": frozenset(data)}
    if "cluster" in data:
        kwargs["cluster"] = parse_cluster(data["cluster"])
    if "model" in data:
        kwargs["model"] = parse_model(data["model"])
    if "policy" in data:
        kwargs["policy"] = parse_policy(data["policy"])
    if "policies" in data:
        if not isinstance(data["policies"], list) or not data["policies"]:
            raise ConfigError("section 'policies' must be a non-empty list")
        kwargs["policies"] = tuple(parse_policy(p, f"policies[{i}]") for i, p in enumerate(data["policies"]))
    if "tuner" in data:
        kwargs["tuner"] = parse_tuner(data["tuner"])
    if "samples_per_iteration" in data:
        spi = data["samples_per_iteration"]
        if not isinstance(spi, (int, float)) or spi <= 0:
            raise ConfigError("'samples_per_iteration' must be a positive number")
        kwargs["samples_per_iteration"] = float(spi)
    return ExperimentConfig(**kwargs)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(data)
