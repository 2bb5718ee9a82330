"""Calibration and uncertainty metrics for binary predictions.

All kernels take a vector of positive-class probabilities and a vector of
0/1 labels. Confidence-based metrics (ECE, aECE, reliability tables) use the
confidence of the predicted class, ``max(p, 1 - p)``, with the predicted
class being 1 when ``p >= 0.5``.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

EPS = 1e-12
DEFAULT_BINS = 10


class AUROCUndefinedError(ValueError):
    pass


@dataclass(frozen=True)
class ProbabilisticPrediction:
    record_id: str
    p: float
    y: int
    task_id: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"{self.record_id}: probability {self.p} outside [0, 1]")
        if self.y not in (0, 1):
            raise ValueError(f"{self.record_id}: label {self.y} is not 0/1")


def unpack(preds: Iterable[ProbabilisticPrediction]) -> tuple[np.ndarray, np.ndarray]:
    preds = list(preds)
    return (
        np.array([x.p for x in preds], dtype=float),
        np.array([x.y for x in preds], dtype=int),
    )


def _check(probs, labels) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(probs, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if p.size == 0:
        raise ValueError("metric of an empty prediction list")
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.size} probabilities, {y.size} labels")
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise ValueError("probabilities must lie in [0, 1]")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return p, y.astype(int)


def brier_score(probs, labels) -> float:
    p, y = _check(probs, labels)
    return float(np.mean((y - p) ** 2))


def nll(probs, labels, eps: float = EPS) -> float:
    """Mean negative log-likelihood (natural log), probabilities clamped to [eps, 1-eps]."""
    p, y = _check(probs, labels)
    p = np.clip(p, eps, 1.0 - eps)
    return float(-np.mean(np.where(y == 1, np.log(p), np.log1p(-p))))


def confidence_and_correct(probs, labels) -> tuple[np.ndarray, np.ndarray]:
    p, y = _check(probs, labels)
    pred = (p >= 0.5).astype(int)
    return np.maximum(p, 1.0 - p), (pred == y).astype(float)


def confidence_bin_edges(n_bins: int) -> np.ndarray:
    return np.linspace(0.5, 1.0, n_bins + 1)


def _fixed_width_index(conf: np.ndarray, n_bins: int) -> np.ndarray:
    # [lo, hi) for every bin except the last, which is [lo, 1.0]
    edges = confidence_bin_edges(n_bins)
    idx = np.searchsorted(edges, conf, side="right") - 1
    return np.clip(idx, 0, n_bins - 1)


def _adaptive_index(conf: np.ndarray, n_bins: int) -> np.ndarray:
    """Equal-mass bins over the stable confidence ordering.

    Bin sizes differ by at most one. Records with identical confidence are
    never split across bins: a tie group straddling a boundary joins the bin
    of its first member.
    """
    n = conf.size
    order = np.argsort(conf, kind="stable")
    sizes = np.full(n_bins, n // n_bins)
    sizes[: n % n_bins] += 1
    by_rank = np.repeat(np.arange(n_bins), sizes)
    sorted_conf = conf[order]
    for i in range(1, n):
        if sorted_conf[i] == sorted_conf[i - 1]:
            by_rank[i] = by_rank[i - 1]
    idx = np.empty(n, dtype=int)
    idx[order] = by_rank
    return idx


def _weighted_gap(conf, correct, idx, n_bins) -> float:
    n = conf.size
    count = np.bincount(idx, minlength=n_bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=n_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    nz = count > 0
    gaps = np.abs(acc_sum[nz] / count[nz] - conf_sum[nz] / count[nz])
    return float(np.sum(count[nz] / n * gaps))


def ece(probs, labels, n_bins: int = DEFAULT_BINS) -> float:
    """Expected calibration error with fixed-width confidence bins over [0.5, 1]."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    conf, correct = confidence_and_correct(probs, labels)
    return _weighted_gap(conf, correct, _fixed_width_index(conf, n_bins), n_bins)


def aece(probs, labels, n_bins: int = DEFAULT_BINS) -> float:
    """Adaptive ECE: same weighted gap as :func:`ece` over equal-mass bins."""
    conf, correct = confidence_and_correct(probs, labels)
    if not 1 <= n_bins <= conf.size:
        raise ValueError(f"n_bins must be in [1, {conf.size}], got {n_bins}")
    return _weighted_gap(conf, correct, _adaptive_index(conf, n_bins), n_bins)


@dataclass(frozen=True)
class ReliabilityBin:
    lower: float
    upper: float
    count: int
    accuracy: float | None
    mean_confidence: float | None


def reliability_table(probs, labels, n_bins: int = DEFAULT_BINS) -> list[ReliabilityBin]:
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    conf, correct = confidence_and_correct(probs, labels)
    idx = _fixed_width_index(conf, n_bins)
    edges = confidence_bin_edges(n_bins)
    out = []
    for m in range(n_bins):
        mask = idx == m
        k = int(mask.sum())
        out.append(
            ReliabilityBin(
                lower=float(edges[m]),
                upper=float(edges[m + 1]),
                count=k,
                accuracy=float(correct[mask].mean()) if k else None,
                mean_confidence=float(conf[mask].mean()) if k else None,
            )
        )
    return out


def class_entropy(answers: Iterable[Hashable], n_classes: int = 2) -> float:
    """Shannon entropy (nats) of the empirical answer distribution.

    An empty answer list means nothing usable came back; it scores the
    maximum ``ln(n_classes)``.
    """
    counts = Counter(answers)
    total = sum(counts.values())
    if total == 0:
        return math.log(n_classes)
    h = -sum((c / total) * math.log(c / total) for c in counts.values())
    return h if h > 0 else 0.0


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(x.size, dtype=float)
    i = 0
    while i < xs.size:
        j = i
        while j + 1 < xs.size and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auroc(scores, positive) -> float:
    """Mann-Whitney AUROC; tied positive/negative pairs count one half."""
    s = np.asarray(scores, dtype=float).ravel()
    c = np.asarray(positive).ravel()
    if s.shape != c.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(np.sum(c == 1))
    n_neg = int(np.sum(c == 0))
    if n_pos + n_neg != c.size:
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise AUROCUndefinedError("AUROC undefined: need at least one positive and one negative")
    ranks = _average_ranks(s)
    u = ranks[c == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricReport:
    """Metric values for one (task, method, tasking) cell.

    A value of ``None`` marks a metric that is undefined for this cell (for
    example AUROC on single-class data); every other value must be finite.
    """

    task_id: str
    method: str
    tasking: str
    metrics: dict[str, float | None]
    n: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.metrics.items():
            if v is not None and not math.isfinite(v):
                raise ValueError(f"{self.task_id}/{self.method}: metric {k} is not finite ({v})")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricReport":
        return cls(
            task_id=d["task_id"],
            method=d["method"],
            tasking=d["tasking"],
            metrics=dict(d["metrics"]),
            n=int(d["n"]),
            config=dict(d.get("config", {})),
        )


def calibration_metrics(probs, labels, n_bins: int = DEFAULT_BINS) -> dict[str, float]:
    """Brier, NLL, ECE and aECE in one dict (aECE bins capped at N)."""
    p, y = _check(probs, labels)
    return {
        "brier": brier_score(p, y),
        "nll": nll(p, y),
        "ece": ece(p, y, n_bins),
        "aece": aece(p, y, min(n_bins, p.size)),
    }


def write_reports_json(path, reports: Sequence[MetricReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_reports_json(path) -> list[MetricReport]:
    with open(path, encoding="utf-8") as fh:
        return [MetricReport.from_dict(d) for d in json.load(fh)]


def read_predictions(path) -> list[ProbabilisticPrediction]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(ProbabilisticPrediction(d["record_id"], d["p"], d["y"], d.get("task_id")))
    return out


def write_predictions(path, preds: Iterable[ProbabilisticPrediction]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x in preds:
            fh.write(
                json.dumps({"record_id": x.record_id, "task_id": x.task_id, "p": x.p, "y": x.y})
                + "\n"
            )
