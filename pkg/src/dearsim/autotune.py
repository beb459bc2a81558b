"""Bayesian optimisation of the tensor-fusion buffer size.

The surrogate is exact GP regression with a squared-exponential kernel. Inputs are
mapped to [0, 1] over the search bounds and outputs are standardised, so the kernel
hyperparameters and the EI margin ``xi`` are scale free.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtr

from .model import MB, ClusterSpec, ModelSpec, PolicyKind, PolicySpec, build_fusion_plan
from .sim import build_graph, simulate

logger = logging.getLogger(__name__)

Objective = Callable[[int], float]

_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Observation:
    buffer_bytes: float
    throughput: float
    steps_averaged: int = 1
    trial: int = 0


@dataclass(frozen=True)
class GpHyperparams:
    lengthscale: float = 0.2
    signal_variance: float = 1.0
    noise_variance: float = 1e-6

    def __post_init__(self) -> None:
        if not (self.lengthscale > 0 and self.signal_variance > 0 and self.noise_variance >= 0):
            raise ValueError(f"invalid GP hyperparameters: {self}")


@dataclass(frozen=True)
class TunerConfig:
    lower: float = 1 * MB
    upper: float = 100 * MB
    xi: float = 0.1
    init_buffer: float = 25 * MB
    measure_steps: int = 10
    max_trials: int = 20
    seed: int = 0
    hyper: GpHyperparams = field(default_factory=GpHyperparams)
    grid_points: int = 512

    def __post_init__(self) -> None:
        if not self.lower < self.upper:
            raise ValueError(f"tuner bounds must satisfy lower < upper, got [{self.lower}, {self.upper}]")
        if not self.xi >= 0:
            raise ValueError("xi must be >= 0")
        if not self.lower <= self.init_buffer <= self.upper:
            raise ValueError("init_buffer must lie within the bounds")
        if self.measure_steps < 1 or self.max_trials < 1:
            raise ValueError("measure_steps and max_trials must be positive")


def _sq_exp(a: np.ndarray, b: np.ndarray, hp: GpHyperparams) -> np.ndarray:
    diff = a[:, None] - b[None, :]
    return hp.signal_variance * np.exp(-0.5 * (diff / hp.lengthscale) ** 2)


class GpPosterior:
    """Fitted GP; ``predict`` answers in the original units."""

    def __init__(self, observations: Sequence[Observation], hyper: GpHyperparams, lower: float, upper: float):
        if not observations:
            raise ValueError("GP fit needs at least one observation")
        self.observations = list(observations)
        self.hyper = hyper
        self.lower = float(lower)
        self.upper = float(upper)
        x = np.array([o.buffer_bytes for o in observations], dtype=float)
        y = np.array([o.throughput for o in observations], dtype=float)
        self.x_train = self.normalize(x)
        self.y_mean = float(y.mean())
        std = float(y.std())
        self.y_scale = std if std > 0 else 1.0
        self.y_train = (y - self.y_mean) / self.y_scale

        if hyper.noise_variance == 0:
            order = np.argsort(self.x_train, kind="stable")
            xs, ys = self.x_train[order], self.y_train[order]
            dup = (np.diff(xs) == 0) & (np.diff(ys) != 0)
            if np.any(dup):
                raise ValueError("inconsistent noise-free observations")

        k = _sq_exp(self.x_train, self.x_train, hyper)
        n = len(self.x_train)
        for jitter in _JITTERS:
            try:
                self.chol = np.linalg.cholesky(k + (hyper.noise_variance + jitter) * np.eye(n))
                break
            except np.linalg.LinAlgError:
                continue
        else:
            raise np.linalg.LinAlgError("kernel matrix is not positive definite even with jitter")
        self.jitter = jitter
        self.weights = np.linalg.solve(self.chol.T, np.linalg.solve(self.chol, self.y_train))

    def normalize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lower) / (self.upper - self.lower)

    def denormalize(self, u) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * (self.upper - self.lower)

    def predict_normalized(self, u) -> tuple[np.ndarray, np.ndarray]:
        """Standardised mean and variance at normalised inputs."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        ks = _sq_exp(u, self.x_train, self.hyper)
        mean = ks @ self.weights
        v = np.linalg.solve(self.chol, ks.T)
        var = self.hyper.signal_variance - np.sum(v * v, axis=0)
        return mean, np.maximum(var, 0.0)

    def predict(self, x) -> tuple[np.ndarray, np.ndarray]:
        mean, var = self.predict_normalized(self.normalize(x))
        return self.y_mean + self.y_scale * mean, var * self.y_scale**2

    @property
    def best_observed(self) -> float:
        return max(o.throughput for o in self.observations)


def gp_fit(
    observations: Sequence[Observation],
    hyper: GpHyperparams | None = None,
    bounds: tuple[float, float] = (1 * MB, 100 * MB),
) -> GpPosterior:
    return GpPosterior(observations, hyper or GpHyperparams(), *bounds)


def ei_closed_form(mu, sigma, best: float, xi: float) -> np.ndarray:
    """Expected improvement for maximisation; zero-variance points get ``max(0, mu - best - xi)``."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    improvement = mu - best - xi
    safe = np.where(sigma > 0, sigma, 1.0)
    z = improvement / safe
    pdf = np.exp(-0.5 * z * z) / _SQRT_2PI
    ei = np.where(sigma > 0, improvement * ndtr(z) + sigma * pdf, np.maximum(improvement, 0.0))
    return np.maximum(ei, 0.0)


def expected_improvement(posterior: GpPosterior, x, best_so_far: float | None = None, xi: float = 0.1):
    """EI at buffer size(s) ``x``, evaluated in standardised throughput units."""
    if best_so_far is None:
        best_so_far = posterior.best_observed
    mean, var = posterior.predict_normalized(posterior.normalize(x))
    best = (best_so_far - posterior.y_mean) / posterior.y_scale
    ei = ei_closed_form(mean, np.sqrt(var), best, xi)
    return float(ei[0]) if np.ndim(x) == 0 else ei


def _candidate_grid(n: int, seed: int | Sequence[int] | None) -> np.ndarray:
    grid = np.linspace(0.0, 1.0, n)
    if seed is not None and n > 1:
        step = 1.0 / (n - 1)
        offset = np.random.default_rng(seed).uniform(-0.5, 0.5) * step
        grid = np.concatenate([[0.0], np.clip(grid[1:-1] + offset, 0.0, 1.0), [1.0]])
    return grid


def suggest_next(posterior: GpPosterior, config: TunerConfig, seed: int | Sequence[int] | None = None) -> float:
    """Buffer size maximising EI over the bounds.

    A dense candidate grid is scored, the best candidate is polished with a bounded
    scalar search inside its neighbouring grid cells. Ties go to the highest posterior
    variance, then the lowest buffer; if EI vanishes everywhere the most uncertain
    candidate is returned.
    """
    best = (posterior.best_observed - posterior.y_mean) / posterior.y_scale
    grid = _candidate_grid(config.grid_points, seed)
    mean, var = posterior.predict_normalized(grid)
    ei = ei_closed_form(mean, np.sqrt(var), best, config.xi)

    top = ei.max()
    if top <= 0:
        # lexsort: last key is primary
        pick = np.lexsort((grid, -var))[0]
        return float(posterior.denormalize(grid[pick]))
    tied = np.flatnonzero(ei >= top * (1 - 1e-12))
    pick = tied[np.lexsort((grid[tied], -var[tied]))[0]]
    u_best, ei_best = grid[pick], ei[pick]

    def neg_ei(u: float) -> float:
        m, v = posterior.predict_normalized(u)
        return -float(ei_closed_form(m, np.sqrt(v), best, config.xi)[0])

    half = 1.0 / max(config.grid_points - 1, 1)
    lo, hi = max(0.0, u_best - half), min(1.0, u_best + half)
    if hi > lo:
        res = minimize_scalar(neg_ei, bounds=(lo, hi), method="bounded", options={"xatol": 1e-6})
        if res.success and -res.fun > ei_best:
            u_best = float(res.x)
    return float(posterior.denormalize(u_best))


@dataclass
class TuneResult:
    method: str
    best_buffer: float
    best_throughput: float
    trace: list[Observation]
    failures: list[tuple[float, str]] = field(default_factory=list)

    def cumulative_best(self) -> list[float]:
        out, best = [], -math.inf
        for obs in self.trace:
            best = max(best, obs.throughput)
            out.append(best)
        return out

    def trials_to_reach(self, target: float) -> int | None:
        """1-based trial number at which the running best first reaches ``target``."""
        for obs, best in zip(self.trace, self.cumulative_best()):
            if best >= target:
                return obs.trial
        return None


class TuningError(RuntimeError):
    pass


class _Runner:
    def __init__(self, objective: Objective, config: TunerConfig, method: str):
        self.objective = objective
        self.config = config
        self.method = method
        self.trace: list[Observation] = []
        self.failures: list[tuple[float, str]] = []
        self.attempts = 0
        self.consecutive_failures = 0

    def measure(self, x: float) -> bool:
        cfg = self.config
        x = min(max(float(x), cfg.lower), cfg.upper)
        self.attempts += 1
        try:
            samples = [float(self.objective(int(round(x)))) for _ in range(cfg.measure_steps)]
            value = math.fsum(samples) / len(samples)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"non-positive throughput {value}")
        except Exception as exc:  # noqa: BLE001 - objective failures are recorded, not fatal
            logger.warning("objective failed at %.0f bytes: %s", x, exc)
            self.failures.append((x, repr(exc)))
            self.consecutive_failures += 1
            if self.consecutive_failures >= 3:
                raise TuningError(f"objective failed 3 times in a row; last error: {exc!r}") from exc
            return False
        self.consecutive_failures = 0
        self.trace.append(Observation(x, value, cfg.measure_steps, self.attempts))
        return True

    def result(self) -> TuneResult:
        if not self.trace:
            raise TuningError("no successful objective evaluations")
        best = max(self.trace, key=lambda o: (o.throughput, -o.trial))
        return TuneResult(self.method, best.buffer_bytes, best.throughput, self.trace, self.failures)


def tune(objective: Objective, config: TunerConfig | None = None) -> TuneResult:
    """BO loop: measure the default buffer, then fit, suggest and measure until the trial budget is spent."""
    config = config or TunerConfig()
    run = _Runner(objective, config, "bo")
    rng = np.random.default_rng(config.seed)
    ok = run.measure(config.init_buffer)
    while run.attempts < config.max_trials:
        if ok and run.trace:
            posterior = gp_fit(run.trace, config.hyper, (config.lower, config.upper))
            x = suggest_next(posterior, config, seed=(config.seed, run.attempts))
        else:
            x = rng.uniform(config.lower, config.upper)
        ok = run.measure(x)
    return run.result()


def random_search(objective: Objective, config: TunerConfig | None = None) -> TuneResult:
    config = config or TunerConfig()
    run = _Runner(objective, config, "random")
    rng = np.random.default_rng(config.seed)
    for x in rng.uniform(config.lower, config.upper, size=config.max_trials):
        run.measure(x)
    return run.result()


def grid_search(objective: Objective, config: TunerConfig | None = None) -> TuneResult:
    config = config or TunerConfig()
    run = _Runner(objective, config, "grid")
    if config.max_trials == 1:
        points = [0.5 * (config.lower + config.upper)]
    else:
        points = np.linspace(config.lower, config.upper, config.max_trials)
    for x in points:
        run.measure(x)
    return run.result()


def simulated_objective(
    model: ModelSpec,
    cluster: ClusterSpec,
    samples_per_iteration: float = 1.0,
    kind: PolicyKind = PolicyKind.DEAR_FUSED,
) -> Objective:
    """Simulated throughput as a function of the fusion buffer size.

    Results are cached per distinct fusion plan since the plan is a step function of
    the buffer size.
    """
    by_plan: dict[tuple, float] = {}
    by_buffer: dict[int, float] = {}

    def objective(buffer_bytes: int) -> float:
        if buffer_bytes not in by_buffer:
            plan = build_fusion_plan(model, buffer_bytes)
            if plan.groups not in by_plan:
                policy = PolicySpec(kind, fusion_buffer_bytes=buffer_bytes)
                makespan = simulate(build_graph(model, policy, cluster, plan)).iteration_seconds
                by_plan[plan.groups] = samples_per_iteration / makespan
            by_buffer[buffer_bytes] = by_plan[plan.groups]
        return by_buffer[buffer_bytes]

    return objective
