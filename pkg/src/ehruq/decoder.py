"""Two-layer decoder over fixed patient embeddings.

The input to the hidden layer is the patient embedding concatenated with a
learned per-task embedding, so one network can serve every task of a
category (multi-task) or just one (single-task, a one-row table). Training
is mini-batch Adam on binary cross-entropy summed over the decoder's tasks.
Dropout sits on the hidden activations; at inference it is either off
(deterministic) or sampled from a seed (MC dropout).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .metrics import MetricReport, calibration_metrics

CHECKPOINT_VERSION = 1
PARAM_NAMES = ("task_embeddings", "w1", "b1", "w2", "b2")
_P_FLOOR = np.finfo(float).eps
_TRAIN_STREAM = 0x7472


class MissingLabelError(ValueError):
    pass


@dataclass(frozen=True)
class DecoderConfig:
    tasks: tuple[str, ...]
    input_dim: int = 768
    task_embed_dim: int = 16
    hidden_dim: int = 256
    dropout: float = 0.5
    seed: int = 0
    learning_rate: float = 1e-3
    epochs: int = 15
    batch_size: int = 64
    weight_decay: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        for name in ("input_dim", "task_embed_dim", "hidden_dim", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if not self.tasks:
            raise ValueError("a decoder needs at least one task")
        if len(set(self.tasks)) != len(self.tasks):
            raise ValueError(f"duplicate task ids in {self.tasks}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class Decoder:
    config: DecoderConfig
    task_embeddings: np.ndarray  # (n_tasks, task_embed_dim)
    w1: np.ndarray  # (input_dim + task_embed_dim, hidden_dim)
    b1: np.ndarray  # (hidden_dim,)
    w2: np.ndarray  # (hidden_dim,)
    b2: np.ndarray  # shape ()

    @property
    def tasks(self) -> tuple[str, ...]:
        return self.config.tasks

    def task_index(self, task: str) -> int:
        try:
            return self.config.tasks.index(task)
        except ValueError:
            raise KeyError(f"task {task!r} is not served by this decoder {self.tasks}") from None

    def parameters(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def with_parameters(self, params: Mapping[str, np.ndarray]) -> "Decoder":
        return replace(self, **{k: np.array(params[k], dtype=float) for k in PARAM_NAMES})


@dataclass(frozen=True)
class EmbeddingRecord:
    record_id: str
    embedding: np.ndarray
    labels: Mapping[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "embedding": [float(v) for v in self.embedding],
            "labels": dict(self.labels),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EmbeddingRecord":
        emb = np.asarray(d["embedding"], dtype=float)
        if not np.all(np.isfinite(emb)):
            raise ValueError(f"{d['record_id']}: non-finite embedding")
        return cls(str(d["record_id"]), emb, {k: int(v) for k, v in d.get("labels", {}).items()})


def read_embeddings(path) -> list[EmbeddingRecord]:
    with open(path, encoding="utf-8") as fh:
        return [EmbeddingRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_embeddings(path, records: Iterable[EmbeddingRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# construction and forward pass


def init_decoder(config: DecoderConfig) -> Decoder:
    """He-uniform weights, zero biases, N(0, 0.1^2) task embeddings."""
    rng = np.random.default_rng(config.seed)
    fan_in1 = config.input_dim + config.task_embed_dim
    bound1 = math.sqrt(6.0 / fan_in1)
    bound2 = math.sqrt(6.0 / config.hidden_dim)
    task_embeddings = rng.normal(0.0, 0.1, size=(len(config.tasks), config.task_embed_dim))
    w1 = rng.uniform(-bound1, bound1, size=(fan_in1, config.hidden_dim))
    w2 = rng.uniform(-bound2, bound2, size=config.hidden_dim)
    return Decoder(
        config=config,
        task_embeddings=task_embeddings,
        w1=w1,
        b1=np.zeros(config.hidden_dim),
        w2=w2,
        b2=np.zeros(()),
    )


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """Inverted-dropout multiplier: 0 for dropped units, 1/(1-rate) for kept ones."""
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def _logits(d: Decoder, x: np.ndarray, task_idx: np.ndarray, mask: np.ndarray | None):
    z = np.concatenate([x, d.task_embeddings[task_idx]], axis=1)
    pre = z @ d.w1 + d.b1
    h = np.maximum(pre, 0.0)
    hd = h if mask is None else h * mask
    return hd @ d.w2 + d.b2, (z, pre, h, hd)


def _as_batch(d: Decoder, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != d.config.input_dim:
        raise ValueError(f"embedding width {x.shape[1]} != decoder input_dim {d.config.input_dim}")
    return x, single


def forward(d: Decoder, x, task: str, dropout_seed: int | None = None):
    """Positive-class probability for one embedding (1-D) or a batch (2-D).

    ``dropout_seed=None`` is the deterministic mode. With a seed, one dropout
    mask is drawn per row from ``default_rng(dropout_seed)``.
    """
    x, single = _as_batch(d, x)
    t = np.full(x.shape[0], d.task_index(task))
    mask = None
    if dropout_seed is not None:
        rng = np.random.default_rng(dropout_seed)
        mask = dropout_mask(rng, (x.shape[0], d.config.hidden_dim), d.config.dropout)
    logit, _ = _logits(d, x, t, mask)
    p = np.clip(_sigmoid(logit), _P_FLOOR, 1.0 - _P_FLOOR)
    return float(p[0]) if single else p


@dataclass(frozen=True)
class MCDropoutPrediction:
    mean: np.ndarray | float
    passes: np.ndarray  # (T,) or (T, batch)


def predict_mc_dropout(d: Decoder, x, task: str, passes: int, seed: int) -> MCDropoutPrediction:
    """Average of ``passes`` stochastic forward passes with independent masks.

    All masks come from one generator seeded with ``seed``, so ``passes=1``
    reproduces ``forward(d, x, task, dropout_seed=seed)``.
    """
    if passes < 1:
        raise ValueError("MC dropout needs at least one pass")
    x, single = _as_batch(d, x)
    t = np.full(x.shape[0], d.task_index(task))
    if d.config.dropout == 0.0:
        # every pass is the deterministic one; averaging would only add rounding
        logit, _ = _logits(d, x, t, None)
        mean = np.clip(_sigmoid(logit), _P_FLOOR, 1.0 - _P_FLOOR)
        out = np.tile(mean, (passes, 1))
    else:
        rng = np.random.default_rng(seed)
        masks = dropout_mask(rng, (passes, x.shape[0], d.config.hidden_dim), d.config.dropout)
        out = np.empty((passes, x.shape[0]))
        for i in range(passes):
            logit, _ = _logits(d, x, t, masks[i])
            out[i] = np.clip(_sigmoid(logit), _P_FLOOR, 1.0 - _P_FLOOR)
        mean = out.mean(axis=0)
    if single:
        return MCDropoutPrediction(float(mean[0]), out[:, 0])
    return MCDropoutPrediction(mean, out)


def ensemble_predict(decoders: Sequence[Decoder], x, task: str):
    """Mean of the members' deterministic probabilities."""
    if not decoders:
        raise ValueError("empty ensemble")
    dims = {m.config.input_dim for m in decoders}
    if len(dims) != 1:
        raise ValueError(f"ensemble members disagree on input_dim: {sorted(dims)}")
    probs = [forward(m, x, task) for m in decoders]
    return float(np.mean(probs)) if np.ndim(probs[0]) == 0 else np.mean(probs, axis=0)


# ---------------------------------------------------------------------------
# training


def _label_matrix(records: Sequence[EmbeddingRecord], tasks: Sequence[str]) -> np.ndarray:
    y = np.empty((len(records), len(tasks)))
    for i, r in enumerate(records):
        for j, t in enumerate(tasks):
            if t not in r.labels:
                raise MissingLabelError(f"record {r.record_id} has no label for task {t}")
            y[i, j] = r.labels[t]
    return y


def loss_and_grad(d: Decoder, x: np.ndarray, y: np.ndarray, mask: np.ndarray | None = None):
    """Loss and parameter gradients for a batch.

    ``x`` is (B, input_dim), ``y`` is (B, n_tasks). Every record is passed
    once per task; the loss is the per-record mean of the BCE summed over
    tasks. ``mask`` (B * n_tasks, hidden_dim), if given, is the dropout
    multiplier for the expanded rows (record-major: record 0 task 0, record 0 task 1, ...).
    """
    b, n_tasks = y.shape
    xr = np.repeat(x, n_tasks, axis=0)
    t = np.tile(np.arange(n_tasks), b)
    yr = y.reshape(-1)
    logit, (z, pre, h, hd) = _logits(d, xr, t, mask)
    loss = float(np.sum(np.logaddexp(0.0, logit) - yr * logit) / b)

    g_logit = (_sigmoid(logit) - yr) / b
    g_w2 = hd.T @ g_logit
    g_b2 = np.asarray(g_logit.sum())
    g_hd = np.outer(g_logit, d.w2)
    g_h = g_hd if mask is None else g_hd * mask
    g_pre = g_h * (pre > 0)
    g_w1 = z.T @ g_pre
    g_b1 = g_pre.sum(axis=0)
    g_z = g_pre @ d.w1.T
    g_te = np.zeros_like(d.task_embeddings)
    np.add.at(g_te, t, g_z[:, d.config.input_dim :])
    grads = {"task_embeddings": g_te, "w1": g_w1, "b1": g_b1, "w2": g_w2, "b2": g_b2}
    if d.config.weight_decay:
        wd = d.config.weight_decay
        loss += 0.5 * wd * float(np.sum(d.w1**2) + np.sum(d.w2**2))
        grads["w1"] = grads["w1"] + wd * d.w1
        grads["w2"] = grads["w2"] + wd * d.w2
    return loss, grads


def mean_loss(d: Decoder, records: Sequence[EmbeddingRecord]) -> float:
    x = np.stack([r.embedding for r in records])
    loss, _ = loss_and_grad(d, x, _label_matrix(records, d.tasks))
    return loss


@dataclass
class TrainResult:
    decoder: Decoder
    history: list[float]


def train(
    d: Decoder,
    records: Sequence[EmbeddingRecord],
    config: DecoderConfig | None = None,
    beta1: float = 0.9,
    beta2: float = 0.999,
    adam_eps: float = 1e-8,
) -> TrainResult:
    """Adam on the summed per-task BCE with dropout active.

    ``history`` holds the deterministic (dropout-free) mean loss over the
    full training set after each epoch. Shuffling and masks draw from a
    stream derived from ``config.seed`` (distinct from the init stream); the
    same seed replays the same run.
    """
    cfg = config or d.config
    if not records:
        raise ValueError("no training records")
    x_all = np.stack([np.asarray(r.embedding, dtype=float) for r in records])
    if x_all.shape[1] != cfg.input_dim:
        raise ValueError(f"embedding width {x_all.shape[1]} != input_dim {cfg.input_dim}")
    y_all = _label_matrix(records, d.tasks)
    rng = np.random.default_rng([cfg.seed, _TRAIN_STREAM])
    params = {k: v.copy() for k, v in d.parameters().items()}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v2 = {k: np.zeros_like(v) for k, v in params.items()}
    step = 0
    history = []
    cur = d.with_parameters(params)
    n_rows = len(d.tasks)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(records))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            mask = dropout_mask(rng, (idx.size * n_rows, cfg.hidden_dim), cfg.dropout)
            _, grads = loss_and_grad(cur, x_all[idx], y_all[idx], mask)
            step += 1
            for k in PARAM_NAMES:
                g = grads[k]
                m[k] = beta1 * m[k] + (1 - beta1) * g
                v2[k] = beta2 * v2[k] + (1 - beta2) * g * g
                m_hat = m[k] / (1 - beta1**step)
                v_hat = v2[k] / (1 - beta2**step)
                params[k] = params[k] - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + adam_eps)
            cur = d.with_parameters(params)
        loss, _ = loss_and_grad(cur, x_all, y_all)
        history.append(loss)
    return TrainResult(cur, history)


# ---------------------------------------------------------------------------
# evaluation

Predictor = Callable[[np.ndarray, str], np.ndarray]


def evaluate(
    predict: Predictor,
    records: Sequence[EmbeddingRecord],
    tasks: Sequence[str],
    method: str,
    tasking: str,
    n_bins: int = 10,
    config: Mapping | None = None,
) -> tuple[list[MetricReport], dict[str, np.ndarray]]:
    """Calibration metrics for each task from a batch predictor.

    ``predict(x, task)`` maps a (N, input_dim) array to N probabilities.
    Returns the per-task reports and the raw probabilities per task.
    """
    x = np.stack([r.embedding for r in records])
    reports, probs = [], {}
    for task in tasks:
        y = np.array([r.labels[task] for r in records])
        p = np.asarray(predict(x, task), dtype=float)
        probs[task] = p
        reports.append(
            MetricReport(
                task_id=task,
                method=method,
                tasking=tasking,
                metrics=calibration_metrics(p, y, n_bins),
                n=len(records),
                config=dict(config or {}),
            )
        )
    return reports, probs


def baseline_predictor(d: Decoder) -> Predictor:
    return lambda x, task: forward(d, x, task)


def ensemble_predictor(members: Sequence[Decoder]) -> Predictor:
    return lambda x, task: ensemble_predict(members, x, task)


def mc_dropout_predictor(d: Decoder, passes: int, seed: int) -> Predictor:
    return lambda x, task: predict_mc_dropout(d, x, task, passes, seed).mean


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, d: Decoder) -> None:
    cfg = asdict(d.config)
    cfg["tasks"] = list(cfg["tasks"])
    payload = {
        "format": "ehruq-decoder",
        "version": CHECKPOINT_VERSION,
        "config": cfg,
        "parameters": {
            k: {"shape": list(np.shape(v)), "values": np.ravel(v).tolist()}
            for k, v in d.parameters().items()
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path) -> Decoder:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != "ehruq-decoder":
        raise ValueError(f"{path}: not a decoder checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')!r}")
    cfg = DecoderConfig(**payload["config"])
    params = {
        k: np.array(v["values"], dtype=float).reshape(v["shape"])
        for k, v in payload["parameters"].items()
    }
    expected = _param_shapes(cfg)
    for k in PARAM_NAMES:
        if k not in params or params[k].shape != expected[k]:
            raise ValueError(f"{path}: parameter {k} missing or misshapen")
        if not np.all(np.isfinite(params[k])):
            raise ValueError(f"{path}: parameter {k} is not finite")
    return Decoder(config=cfg, **params)


def _param_shapes(cfg: DecoderConfig) -> dict[str, tuple]:
    return {
        "task_embeddings": (len(cfg.tasks), cfg.task_embed_dim),
        "w1": (cfg.input_dim + cfg.task_embed_dim, cfg.hidden_dim),
        "b1": (cfg.hidden_dim,),
        "w2": (cfg.hidden_dim,),
        "b2": (),
    }
