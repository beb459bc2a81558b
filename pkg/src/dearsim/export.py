"""Chrome-trace, CSV and markdown renderings of timelines, reports and tuning traces.

Floats are written with ``repr`` so that reading a CSV back gives the same values bit for bit.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from typing import Iterable, Sequence

from .analysis import Breakdown, SpeedupReport
from .autotune import TuneResult
from .sim import Resource, Timeline

_TID = {Resource.COMPUTE: 0, Resource.COMM: 1, Resource.LATENCY: 2}


def chrome_trace(timeline: Timeline) -> dict:
    tasks = timeline.graph.tasks
    events = []
    for ev in timeline.events:
        task = tasks[ev.task_id]
        events.append({
            "name": task.label,
            "cat": task.kind.value,
            "ph": "X",
            "ts": ev.start * 1e6,
            "dur": (ev.end - ev.start) * 1e6,
            "pid": 0,
            "tid": _TID[ev.resource],
            "args": {"task_id": task.id},
        })
    meta = [
        {"name": "thread_name", "ph": "M", "pid": 0, "tid": tid, "args": {"name": res.value}}
        for res, tid in _TID.items()
    ]
    return {"traceEvents": meta + events, "displayTimeUnit": "ms"}


def chrome_trace_json(timeline: Timeline) -> str:
    return json.dumps(chrome_trace(timeline), indent=1)


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


TIMELINE_HEADER = ("task_id", "label", "kind", "resource", "start", "end")


def timeline_csv(timeline: Timeline) -> str:
    tasks = timeline.graph.tasks
    return _csv(
        TIMELINE_HEADER,
        (
            (ev.task_id, tasks[ev.task_id].label, tasks[ev.task_id].kind, ev.resource, ev.start, ev.end)
            for ev in sorted(timeline.events, key=lambda e: (e.start, e.task_id))
        ),
    )


REPORT_FIELDS = tuple(f.name for f in dataclasses.fields(SpeedupReport))


def reports_csv(reports: Sequence[SpeedupReport]) -> str:
    return _csv(REPORT_FIELDS, (dataclasses.astuple(r) for r in reports))


def parse_reports_csv(text: str) -> list[SpeedupReport]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != REPORT_FIELDS:
        raise ValueError(f"unexpected report header {reader.fieldnames}")
    out = []
    for row in reader:
        values = {}
        for f in dataclasses.fields(SpeedupReport):
            raw = row[f.name]
            values[f.name] = raw if f.type == "str" else int(raw) if f.type == "int" else float(raw)
        out.append(SpeedupReport(**values))
    return out


def reports_markdown(reports: Sequence[SpeedupReport]) -> str:
    lines = [
        "| policy | P | iteration (ms) | speedup | S_max | ratio |",
        "|---|---:|---:|---:|---:|---:|",
    ]
    for r in reports:
        lines.append(
            f"| {r.policy} | {r.workers} | {r.iteration_seconds * 1e3:.3f} | "
            f"{r.simulated_speedup:.2f} | {r.s_max:.2f} | {r.ratio:.3f} |"
        )
    return "\n".join(lines) + "\n"


def breakdown_markdown(b: Breakdown) -> str:
    return (
        "| FF (ms) | BP (ms) | exposed comm (ms) | iteration (ms) |\n"
        "|---:|---:|---:|---:|\n"
        f"| {b.ff_seconds * 1e3:.3f} | {b.bp_seconds * 1e3:.3f} | "
        f"{b.exposed_comm_seconds * 1e3:.3f} | {b.iteration_seconds * 1e3:.3f} |\n"
    )


TUNE_HEADER = ("trial", "x_bytes", "throughput", "cumulative_best")


def tune_trace_csv(result: TuneResult) -> str:
    return _csv(
        TUNE_HEADER,
        ((o.trial, o.buffer_bytes, o.throughput, best) for o, best in zip(result.trace, result.cumulative_best())),
    )
