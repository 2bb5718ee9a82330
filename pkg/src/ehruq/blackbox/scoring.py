"""Entropy-based uncertainty over response sets and its evaluation."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..metrics import MetricReport, auroc, class_entropy
from .parsing import Answer
from .responses import ResponseSet


@dataclass(frozen=True)
class TaskUncertainty:
    entropy: float
    majority: Answer
    valid: int
    tie: bool
    yes_fraction: float  # among valid answers; 0.5 when there are none


def score_uncertainty(rs: ResponseSet, n_classes: int = 2) -> dict[str, TaskUncertainty]:
    """Class entropy, majority vote and valid count for every task in ``rs``.

    Invalid answers are left out of the distribution. A split vote resolves
    to No with ``tie`` set; so does an all-invalid set, which also gets the
    maximal entropy ``ln(n_classes)``.
    """
    out = {}
    for task in rs.task_ids:
        valid = [a for a in rs.parsed[task] if a is not Answer.INVALID]
        counts = Counter(valid)
        yes, no = counts[Answer.YES], counts[Answer.NO]
        if yes > no:
            majority, tie = Answer.YES, False
        elif no > yes:
            majority, tie = Answer.NO, False
        else:
            majority, tie = Answer.NO, True
        out[task] = TaskUncertainty(
            entropy=class_entropy(valid, n_classes),
            majority=majority,
            valid=len(valid),
            tie=tie,
            yes_fraction=yes / len(valid) if valid else 0.5,
        )
    return out


@dataclass(frozen=True)
class ScoredRecord:
    """One response set with the ground-truth label of each of its tasks."""

    response_set: ResponseSet
    truth: Mapping[str, int]


def evaluate_blackbox(
    records: Sequence[ScoredRecord],
    method: str,
    tasking: str,
    config: Mapping | None = None,
) -> list[MetricReport]:
    """Per-task discrimination (``auc``) and uncertainty quality (``uq``).

    ``auc`` ranks records by the fraction of valid Yes answers against the
    true label. ``uq`` ranks them by negative entropy against whether the
    majority vote was right, so higher means the entropy separates right from
    wrong answers. Either is ``None`` (listed under ``config["undefined"]``)
    when its labels are single-class.
    """
    per_task: dict[str, list[tuple[TaskUncertainty, int]]] = {}
    for rec in records:
        scores = score_uncertainty(rec.response_set)
        for task, u in scores.items():
            per_task.setdefault(task, []).append((u, int(rec.truth[task])))

    reports = []
    for task, rows in per_task.items():
        truth = np.array([y for _, y in rows])
        yes_frac = np.array([u.yes_fraction for u, _ in rows])
        entropy = np.array([u.entropy for u, _ in rows])
        correct = np.array([int((u.majority is Answer.YES) == bool(y)) for u, y in rows])
        undefined = []
        auc = uq = None
        if 0 < truth.sum() < truth.size:
            auc = auroc(yes_frac, truth)
        else:
            undefined.append("auc")
        if 0 < correct.sum() < correct.size:
            uq = auroc(-entropy, correct)
        else:
            undefined.append("uq")
        n_gen = sum(u.valid for u, _ in rows)
        total = sum(len(r.response_set.parsed[task]) for r in records if task in r.response_set.parsed)
        reports.append(
            MetricReport(
                task_id=task,
                method=method,
                tasking=tasking,
                metrics={
                    "auc": auc,
                    "uq": uq,
                    "accuracy": float(correct.mean()),
                    "mean_entropy": float(entropy.mean()),
                    "valid_rate": n_gen / total if total else 0.0,
                },
                n=len(rows),
                config={**dict(config or {}), "undefined": undefined},
            )
        )
    return reports
