"""Experiment configuration.

One YAML file drives every subcommand. Unknown keys are rejected so typos
surface early. Every section is optional and falls back to the defaults
below, which carry the experimental settings (5 ensemble members, dropout
0.5, 5 responses per prompt, 100-record test sets with at least 12
positives per task).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .blackbox.tasks import CATEGORIES, TASKS

WHITEBOX_METHODS = ("baseline", "deep_ensemble", "mc_dropout")
TASKING = ("single", "multi")


class ConfigError(ValueError):
    pass


@dataclass
class SynthSection:
    n_patients: int = 3000
    embedding_dim: int = 768
    latent_dim: int = 8
    vocab_size: int = 120
    events_per_patient: tuple[int, int] = (20, 80)
    label_signal: float = 2.5
    prevalence_range: tuple[float, float] = (0.12, 0.30)
    embedding_noise: float = 1.0


@dataclass
class DataSection:
    cohort: str | None = None
    embeddings: str | None = None
    concepts: str | None = None


@dataclass
class DecoderSection:
    task_embed_dim: int = 16
    hidden_dim: int = 256
    dropout: float = 0.5
    learning_rate: float = 1e-3
    epochs: int = 15
    batch_size: int = 64
    weight_decay: float = 0.0


@dataclass
class WhiteboxSection:
    methods: tuple[str, ...] = WHITEBOX_METHODS
    tasking: tuple[str, ...] = TASKING
    n_train: int = 2000
    n_test: int = 1000
    ensemble_size: int = 5
    mc_passes: int = 20
    n_bins: int = 10
    decoder: DecoderSection = field(default_factory=DecoderSection)
    # per-member decoder overrides cycled over ensemble members, e.g.
    # [{learning_rate: 0.001}, {learning_rate: 0.003}]; empty = seeds only
    ensemble_grid: tuple[dict, ...] = ()


@dataclass
class ClientSection:
    name: str
    kind: str = "mock"  # mock | http
    model: str | None = None
    base_url: str | None = None
    api_key_env: str | None = "OPENAI_API_KEY"
    accuracy_signal: float = 1.0
    noise_temperature: float = 1.0
    invalid_rate: float = 0.05
    seed: int | None = None


@dataclass
class RetrySection:
    max_attempts: int = 3
    initial_backoff: float = 1.0
    multiplier: float = 2.0
    timeout: float = 60.0


@dataclass
class BlackboxSection:
    clients: tuple[ClientSection, ...] = (
        ClientSection("mock-a", accuracy_signal=1.0),
        ClientSection("mock-b", accuracy_signal=1.0),
    )
    serve_mocks: bool = True
    tasking: tuple[str, ...] = TASKING
    ensemble: bool = True
    n_responses: int = 5
    n_records: int = 100
    min_positives: int = 12
    max_draws: int = 10_000
    token_budget: int = 3000
    temperature: float = 1.0
    max_in_flight: int = 4
    requests_per_second: float | None = None
    use_n: bool = False
    # False: audit request bodies carry prompt digests, the text lives in the archives
    audit_full_bodies: bool = False
    retry: RetrySection = field(default_factory=RetrySection)


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/default"
    workers: int = 1
    categories: tuple[str, ...] = CATEGORIES
    synth: SynthSection = field(default_factory=SynthSection)
    data: DataSection = field(default_factory=DataSection)
    whitebox: WhiteboxSection = field(default_factory=WhiteboxSection)
    blackbox: BlackboxSection = field(default_factory=BlackboxSection)

    def validate(self) -> "ExperimentConfig":
        s, w, b = self.synth, self.whitebox, self.blackbox
        _require(self.workers >= 1, "workers must be >= 1")
        _require(bool(self.categories), "categories is empty")
        for c in self.categories:
            _require(c in CATEGORIES, f"unknown category {c!r}")
        _require(s.n_patients >= 1, "synth.n_patients must be >= 1")
        _require(s.embedding_dim >= 1 and s.latent_dim >= 1, "synth dims must be >= 1")
        _require(bool(w.methods), "whitebox.methods is empty")
        _require(bool(w.tasking), "whitebox.tasking is empty")
        for m in w.methods:
            _require(m in WHITEBOX_METHODS, f"unknown whitebox method {m!r}")
        for t in (*w.tasking, *b.tasking):
            _require(t in TASKING, f"unknown tasking {t!r}")
        _require(w.n_train >= 1 and w.n_test >= 1, "whitebox.n_train/n_test must be >= 1")
        _require(w.ensemble_size >= 1, "whitebox.ensemble_size must be >= 1")
        _require(w.mc_passes >= 1, "whitebox.mc_passes must be >= 1")
        _require(w.n_bins >= 1, "whitebox.n_bins must be >= 1")
        _require(0 <= w.decoder.dropout < 1, "whitebox.decoder.dropout must be in [0, 1)")
        _require(bool(b.tasking), "blackbox.tasking is empty")
        _require(bool(b.clients), "blackbox.clients is empty")
        names = [c.name for c in b.clients]
        _require(len(set(names)) == len(names), "blackbox client names must be unique")
        _require("ensemble" not in names, "'ensemble' is reserved as a column name")
        for c in b.clients:
            _require(c.kind in ("mock", "http"), f"client {c.name}: kind must be mock or http")
            _require(c.kind != "http" or bool(c.base_url), f"client {c.name}: http clients need base_url")
        _require(b.n_responses >= 1, "blackbox.n_responses must be >= 1")
        _require(b.n_records >= 1 and b.min_positives >= 0, "blackbox sampling sizes invalid")
        _require(b.token_budget >= 1, "blackbox.token_budget must be >= 1")
        _require(b.max_in_flight >= 1, "blackbox.max_in_flight must be >= 1")
        _require(b.retry.max_attempts >= 1, "blackbox.retry.max_attempts must be >= 1")
        for c in self.categories:
            n_tasks = sum(t.category == c for t in TASKS.values())
            _require(
                "multi" not in b.tasking or n_tasks >= 2,
                f"category {c} has fewer than two tasks; multi tasking impossible",
            )
        return self

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


def _require(ok: bool, msg: str) -> None:
    if not ok:
        raise ConfigError(msg)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _build(cls, data: Any, where: str):
    if data is None:
        return cls() if _all_defaulted(cls) else None
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce(cls, name, value, f"{where}.{name}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _all_defaulted(cls) -> bool:
    return all(
        f.default is not dataclasses.MISSING or f.default_factory is not dataclasses.MISSING
        for f in dataclasses.fields(cls)
    )


_NESTED = {
    (ExperimentConfig, "synth"): SynthSection,
    (ExperimentConfig, "data"): DataSection,
    (ExperimentConfig, "whitebox"): WhiteboxSection,
    (ExperimentConfig, "blackbox"): BlackboxSection,
    (WhiteboxSection, "decoder"): DecoderSection,
    (BlackboxSection, "retry"): RetrySection,
}


def _coerce(cls, name, value, where):
    nested = _NESTED.get((cls, name))
    if nested is not None:
        return _build(nested, value, where)
    if cls is BlackboxSection and name == "clients":
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        return tuple(_build(ClientSection, v, f"{where}[{i}]") for i, v in enumerate(value))
    if isinstance(value, list):
        return tuple(value)
    return value


def load_config(path: str | Path | None = None, overrides: Mapping | None = None) -> ExperimentConfig:
    """Read a YAML config (or start from defaults) and validate it."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"{path}: config file not found")
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    cfg = _build(ExperimentConfig, data, "config")
    return cfg.validate()
