"""Grid-shaped metric tables.

A table has one row per task and one column per ``group/metric`` where a
group is ``method/tasking`` (``baseline/single``, ``mock-a/multi``,
``ensemble/single`` ...). Floats are written with ``repr`` so a CSV read
back gives exactly the values that were written; an empty cell is a
missing or undefined value.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .blackbox.tasks import TASKS
from .metrics import MetricReport

WHITEBOX_METRICS = ("brier", "nll", "ece", "aece")
BLACKBOX_METRICS = ("auc", "uq")
LOWER_IS_BETTER = frozenset({"brier", "nll", "ece", "aece"})
HIGHER_IS_BETTER = frozenset({"auc", "uq", "accuracy"})

Key = tuple[str, str, str, str]  # task, method, tasking, metric


def _fmt(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def _category(task: str) -> str:
    spec = TASKS.get(task)
    return spec.category if spec else ""


def table_rows(
    reports: Iterable[MetricReport],
    groups: Sequence[tuple[str, str]],
    metrics: Sequence[str],
    tasks: Sequence[str] | None = None,
) -> tuple[list[str], list[list[str]], list[tuple[str, str, str]]]:
    """Header, rows and the list of missing ``(task, method, tasking)`` cells."""
    index = {(r.task_id, r.method, r.tasking): r for r in reports}
    if tasks is None:
        seen = dict.fromkeys(r.task_id for r in index.values())
        tasks = [t for t in TASKS if t in seen] + [t for t in seen if t not in TASKS]
    header = ["task_id", "category"] + [f"{m}/{t}/{k}" for m, t in groups for k in metrics]
    rows, missing = [], []
    for task in tasks:
        row = [task, _category(task)]
        for method, tasking in groups:
            rep = index.get((task, method, tasking))
            if rep is None:
                missing.append((task, method, tasking))
            for k in metrics:
                row.append(_fmt(rep.metrics.get(k)) if rep else "")
        rows.append(row)
    return header, rows, missing


def write_table_csv(path, reports, groups, metrics, tasks=None) -> list[tuple[str, str, str]]:
    header, rows, missing = table_rows(reports, groups, metrics, tasks)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
    return missing


def read_table_csv(path) -> dict[Key, float | None]:
    """Inverse of :func:`write_table_csv`."""
    out: dict[Key, float | None] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for row in reader:
            task = row[0]
            for col, cell in zip(header[2:], row[2:]):
                method, tasking, metric = col.rsplit("/", 2)
                out[(task, method, tasking, metric)] = float(cell) if cell else None
    return out


def reports_to_values(reports: Iterable[MetricReport]) -> dict[Key, float | None]:
    out = {}
    for r in reports:
        for k, v in r.metrics.items():
            out[(r.task_id, r.method, r.tasking, k)] = v
    return out


def best_flags(values: Mapping[Key, float | None]) -> dict[Key, bool]:
    """Mark, per task and metric, the cell(s) with the best value across groups."""
    by_task_metric: dict[tuple[str, str], list[tuple[Key, float]]] = defaultdict(list)
    for key, v in values.items():
        if v is not None and (key[3] in LOWER_IS_BETTER or key[3] in HIGHER_IS_BETTER):
            by_task_metric[(key[0], key[3])].append((key, v))
    flags = {k: False for k in values}
    for (_, metric), cells in by_task_metric.items():
        pick = min if metric in LOWER_IS_BETTER else max
        target = pick(v for _, v in cells)
        for key, v in cells:
            flags[key] = v == target
    return flags


@dataclass(frozen=True)
class SummaryRow:
    task_id: str
    method: str
    tasking: str
    metric: str
    values: tuple[float | None, ...]
    best: bool

    @property
    def deltas(self) -> tuple[float | None, ...]:
        base = self.values[0]
        return tuple(
            None if (base is None or v is None) else v - base for v in self.values[1:]
        )


def summarize(runs: Sequence[Mapping[Key, float | None]]) -> list[SummaryRow]:
    """Merge runs cell by cell; ``best`` refers to the first run."""
    if not runs:
        raise ValueError("nothing to summarize")
    keys = list(dict.fromkeys(k for run in runs for k in run))
    flags = best_flags(runs[0])
    return [
        SummaryRow(*k, values=tuple(run.get(k) for run in runs), best=flags.get(k, False))
        for k in keys
    ]


def write_summary_csv(path, rows: Sequence[SummaryRow], run_names: Sequence[str]) -> None:
    header = ["task_id", "method", "tasking", "metric", *run_names, "best"]
    header += [f"delta_{n}" for n in run_names[1:]]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(
                [r.task_id, r.method, r.tasking, r.metric, *map(_fmt, r.values), str(r.best).lower()]
                + [_fmt(d) for d in r.deltas]
            )


def summary_markdown(rows: Sequence[SummaryRow], run_names: Sequence[str]) -> str:
    """Human-readable pivot: one table per metric, best cells in bold."""
    metrics = list(dict.fromkeys(r.metric for r in rows))
    lines = []
    for metric in metrics:
        sub = [r for r in rows if r.metric == metric]
        groups = list(dict.fromkeys((r.method, r.tasking) for r in sub))
        tasks = list(dict.fromkeys(r.task_id for r in sub))
        cell = {(r.task_id, r.method, r.tasking): r for r in sub}
        arrow = " (lower is better)" if metric in LOWER_IS_BETTER else (
            " (higher is better)" if metric in HIGHER_IS_BETTER else ""
        )
        lines.append(f"## {metric}{arrow}\n")
        lines.append("| task | " + " | ".join(f"{m} {t}" for m, t in groups) + " |")
        lines.append("|---" * (len(groups) + 1) + "|")
        for task in tasks:
            parts = []
            for g in groups:
                r = cell.get((task, *g))
                if r is None or r.values[0] is None:
                    parts.append("n/a")
                    continue
                txt = f"{r.values[0]:.4f}"
                for name, d in zip(run_names[1:], r.deltas):
                    txt += f" ({'+' if d is not None and d >= 0 else ''}{'n/a' if d is None else f'{d:.4f}'} vs {name})"
                parts.append(f"**{txt}**" if r.best else txt)
            lines.append(f"| {task} | " + " | ".join(parts) + " |")
        lines.append("")
    return "\n".join(lines)
