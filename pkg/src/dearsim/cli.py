"""Command-line entry point.

Exit status: 0 on success, 1 on invalid input or usage, 2 on internal errors.
Results go to stdout (or ``--out``); diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis, autotune, collective, export
from .config import ConfigError, ExperimentConfig, TunerSettings, load_config
from .cost import calibrate_alpha_beta
from .model import MB, PolicyKind, PolicySpec
from .sim import build_graph, simulate

logger = logging.getLogger("dearsim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def default_policies(config: ExperimentConfig) -> list[PolicySpec]:
    buffer = 25 * MB
    partition = 4 * MB
    if config.policy is not None:
        buffer = config.policy.fusion_buffer_bytes or buffer
        partition = config.policy.partition_bytes or partition
    return [
        PolicySpec(PolicyKind.WFBP),
        PolicySpec(PolicyKind.WFBP_FUSED, fusion_buffer_bytes=buffer),
        PolicySpec(PolicyKind.PRIORITY_PARTITION, partition_bytes=partition),
        PolicySpec(PolicyKind.DEAR),
        PolicySpec(PolicyKind.DEAR_FUSED, fusion_buffer_bytes=buffer),
    ]


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
        logger.info("wrote %s", out)
    else:
        sys.stdout.write(text)


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    config.require("cluster", "model", "policy")
    graph = build_graph(config.model, config.policy, config.cluster)
    timeline = simulate(graph)
    b = analysis.breakdown(timeline, config.model)
    fmt = args.format or "md"
    if fmt == "trace":
        text = export.chrome_trace_json(timeline)
    elif fmt == "csv":
        text = export.timeline_csv(timeline)
    else:
        text = (
            f"policy: {config.policy.label}\nmodel: {config.model.name} ({config.model.num_layers} layers)\n"
            f"cluster: {config.cluster.name} (P={config.cluster.workers})\n\n" + export.breakdown_markdown(b)
        )
    _emit(text, args.out)
    return 0


def cmd_compare(args) -> int:
    config = load_config(args.config)
    config.require("cluster", "model")
    policies = list(config.policies) or default_policies(config)
    reports = analysis.compare_policies(config.model, config.cluster, policies)
    text = export.reports_markdown(reports) if args.format == "md" else export.reports_csv(reports)
    _emit(text, args.out)
    return 0


def cmd_tune(args) -> int:
    config = load_config(args.config)
    config.require("cluster", "model")
    settings = config.tuner or TunerSettings("bo", autotune.TunerConfig())
    tuner_config = settings.config
    if args.seed is not None:
        tuner_config = dataclasses.replace(tuner_config, seed=args.seed)
    method = args.method or settings.method
    kind = PolicyKind.DEAR_FUSED
    if config.policy is not None and config.policy.kind.fused:
        kind = config.policy.kind
    objective = autotune.simulated_objective(config.model, config.cluster, config.samples_per_iteration, kind)
    search = {"bo": autotune.tune, "random": autotune.random_search, "grid": autotune.grid_search}[method]
    result = search(objective, tuner_config)
    logger.info("%s best buffer %.0f bytes, throughput %.6g", method, result.best_buffer, result.best_throughput)
    _emit(export.tune_trace_csv(result), args.out)
    return 0


def _parse_point(text: str) -> tuple[float, float]:
    try:
        size, seconds = text.split(":")
        return float(size), float(seconds)
    except ValueError:
        raise ValueError(f"calibration point must look like BYTES:SECONDS, got {text!r}") from None


def cmd_calibrate(args) -> int:
    points = [_parse_point(p) for p in args.point]
    fit = calibrate_alpha_beta(points, args.workers)
    if fit.clamped:
        print("warning: negative estimate clamped to 0", file=sys.stderr)
    _emit(json.dumps({"alpha": fit.alpha, "beta": fit.beta, "clamped": fit.clamped, "residual": fit.residual}) + "\n", args.out)
    return 0


def cmd_collective_check(args) -> int:
    if args.workers < 1 or args.elems < 0:
        raise ValueError("--workers must be >= 1 and --elems >= 0")
    rng = np.random.default_rng(args.seed)
    if args.distribution == "int":
        # integer-valued inputs make every summation order exact
        vectors = [rng.integers(-1000, 1000, size=args.elems).astype(np.float64) for _ in range(args.workers)]
    else:
        vectors = [rng.standard_normal(args.elems) for _ in range(args.workers)]
    scattered = collective.ring_reduce_scatter(vectors)
    gathered, ag_trace = collective.ring_all_gather(scattered)

    oracle = np.zeros(args.elems)
    for v in vectors:
        for i in range(args.elems):
            oracle[i] += v[i]
    scale = np.maximum(np.sum(np.abs(vectors), axis=0), 1.0) if args.elems else np.ones(0)
    deviation = max((float(np.max(np.abs(g - oracle) / scale)) for g in gathered if g.size), default=0.0)
    rounds_ok = scattered.trace.rounds == ag_trace.rounds == args.workers - 1
    replicas_ok = all(np.array_equal(g, gathered[0]) for g in gathered)
    ok = deviation <= 1e-12 and rounds_ok and replicas_ok
    _emit(
        f"{'PASS' if ok else 'FAIL'} workers={args.workers} elems={args.elems} "
        f"max_deviation={deviation:.3e} rounds={scattered.trace.rounds}+{ag_trace.rounds} "
        f"replicas_identical={replicas_ok}\n",
        args.out,
    )
    return 0 if ok else 1


def cmd_analyze(args) -> int:
    s_max = analysis.max_speedup(args.tff, args.tbp, args.trs, args.tag, args.workers)
    t_dear, t_baseline = analysis.theoretical_times(args.tff, args.tbp, args.trs, args.tag)
    lines = [
        f"t_ar={args.trs + args.tag!r}",
        f"s_max={s_max:.6g}",
        f"t_dear={t_dear:.6g}",
        f"t_baseline={t_baseline:.6g}",
        f"saving={t_baseline - t_dear:.6g}",
    ]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dearsim", description="Communication scheduling simulator for data-parallel training.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate one policy and print its timeline or breakdown")
    p.add_argument("--config", required=True)
    p.add_argument("--format", choices=["md", "csv", "trace"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="compare policies against the speedup bound")
    p.add_argument("--config", required=True)
    p.add_argument("--format", choices=["csv", "md"], default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("tune", help="search the fusion buffer size")
    p.add_argument("--config", required=True)
    p.add_argument("--method", choices=["bo", "random", "grid"])
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=["csv"], default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("calibrate", help="fit alpha and beta to all-reduce timings")
    p.add_argument("--point", action="append", required=True, metavar="BYTES:SECONDS")
    p.add_argument("--workers", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("collective-check", help="verify ring RS+AG against a brute-force sum")
    p.add_argument("--workers", type=int, required=True)
    p.add_argument("--elems", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--distribution", choices=["int", "normal"], default="int")
    p.add_argument("--out")
    p.set_defaults(func=cmd_collective_check)

    p = sub.add_parser("analyze", help="closed-form bounds from explicit durations")
    for flag in ("--tff", "--tbp", "--trs", "--tag"):
        p.add_argument(flag, type=float, required=True)
    p.add_argument("--workers", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)
    return parser


def run_cli(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
