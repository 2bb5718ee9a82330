"""Synthetic cohorts and a controllable mock text-generation model.

The cohort generator stands in for a real EHR extract plus a pretrained
sequence encoder: each patient has a latent risk vector ``z`` that drives
which codes they accumulate, what their patient embedding looks like and
(through a per-task logistic model) their outcome labels. Every number here
is a fixture chosen for desk-scale experiments, not a clinical estimate.

The mock model answers prompts whose true labels it can look up by prompt
fingerprint, saying Yes with probability ``sigmoid(signal * s / temperature)``
where ``s`` is +1 for a positive record and -1 otherwise.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import math
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .blackbox.clients import SamplingParams
from .blackbox.prompts import MULTI, SINGLE, Prompt, fingerprint
from .blackbox.tasks import TASKS, TaskSpec
from .decoder import EmbeddingRecord, write_embeddings
from .ehr_core import (
    UTC,
    Concept,
    ConceptDictionary,
    EventDomain,
    MedicalEvent,
    PatientSequence,
    TaskLabel,
    write_cohort,
)
from .seeding import derive_seed

log = logging.getLogger(__name__)


class CohortConfigError(ValueError):
    pass


class InfeasibleSampleError(RuntimeError):
    pass


class UnknownPromptError(KeyError):
    pass


# ---------------------------------------------------------------------------
# cohort


@dataclass(frozen=True)
class CohortConfig:
    n_patients: int = 3000
    tasks: tuple[TaskSpec, ...] = tuple(TASKS.values())
    embedding_dim: int = 768
    latent_dim: int = 8
    vocab_size: int = 120
    events_per_patient: tuple[int, int] = (20, 80)
    label_weights: Mapping[str, Sequence[float]] | None = None
    label_intercepts: Mapping[str, float] | None = None
    label_signal: float = 2.5
    prevalence_range: tuple[float, float] = (0.12, 0.30)
    embedding_noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "events_per_patient", tuple(self.events_per_patient))
        if self.n_patients < 1:
            raise CohortConfigError("n_patients must be >= 1")
        if not self.tasks:
            raise CohortConfigError("no tasks")
        if len({t.task_id for t in self.tasks}) != len(self.tasks):
            raise CohortConfigError("duplicate task ids")
        for name in ("embedding_dim", "latent_dim", "vocab_size"):
            if getattr(self, name) < 1:
                raise CohortConfigError(f"{name} must be >= 1")
        lo, hi = self.events_per_patient
        if not 2 <= lo <= hi:
            raise CohortConfigError("events_per_patient must satisfy 2 <= min <= max")
        plo, phi = self.prevalence_range
        if not 0 < plo <= phi < 1:
            raise CohortConfigError("prevalence_range must lie inside (0, 1)")
        ids = {t.task_id for t in self.tasks}
        for name in ("label_weights", "label_intercepts"):
            given = getattr(self, name)
            if given is not None and set(given) - ids:
                raise CohortConfigError(f"{name} names unknown tasks {sorted(set(given) - ids)}")
        for task, w in (self.label_weights or {}).items():
            if len(w) != self.latent_dim or not all(math.isfinite(v) for v in w):
                raise CohortConfigError(f"label weights for {task} must be {self.latent_dim} finite values")
        for task, b in (self.label_intercepts or {}).items():
            if not math.isfinite(b):
                raise CohortConfigError(f"intercept for {task} is not finite")

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(t.category for t in self.tasks))

    def tasks_for(self, category: str) -> tuple[TaskSpec, ...]:
        return tuple(t for t in self.tasks if t.category == category)


@dataclass
class Cohort:
    config: CohortConfig
    sequences: list[PatientSequence]
    embeddings: list[EmbeddingRecord]
    concepts: ConceptDictionary
    latent: np.ndarray
    weights: dict[str, np.ndarray]
    intercepts: dict[str, float]

    def embeddings_for(self, category: str) -> list[EmbeddingRecord]:
        suffix = "/" + category
        return [r for r in self.embeddings if r.record_id.endswith(suffix)]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def expected_positive_rate(weights: np.ndarray, intercept: float, order: int = 80) -> float:
    """E[sigmoid(w.z + b)] for z ~ N(0, I), by Gauss-Hermite quadrature."""
    nodes, wts = np.polynomial.hermite_e.hermegauss(order)
    scale = float(np.linalg.norm(weights))
    return float(np.sum(wts * _sigmoid(intercept + scale * nodes)) / math.sqrt(2 * math.pi))


def _intercept_for(weights: np.ndarray, target: float) -> float:
    lo, hi = -40.0, 40.0
    for _ in range(100):
        mid = (lo + hi) / 2
        if expected_positive_rate(weights, mid) < target:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


_CURATED = {
    EventDomain.MEASUREMENT: [
        ("LOINC/8480-6", "Systolic blood pressure", "mmHg", 128.0, 14.0),
        ("LOINC/8462-4", "Diastolic blood pressure", "mmHg", 78.0, 9.0),
        ("LOINC/8867-4", "Heart rate", "/min", 80.0, 12.0),
        ("LOINC/777-3", "Platelets [#/volume] in Blood", "10*3/uL", 240.0, 60.0),
        ("LOINC/2823-3", "Potassium [Moles/volume] in Serum or Plasma", "mmol/L", 4.2, 0.5),
        ("LOINC/2345-7", "Glucose [Mass/volume] in Serum or Plasma", "mg/dL", 105.0, 25.0),
        ("LOINC/2951-2", "Sodium [Moles/volume] in Serum or Plasma", "mmol/L", 139.0, 3.5),
        ("LOINC/718-7", "Hemoglobin [Mass/volume] in Blood", "g/dL", 13.2, 1.6),
    ],
    EventDomain.DRUG: [
        ("RxNorm/1049621", "Oxycodone hydrochloride 5 MG Oral Tablet", None, None, None),
        ("RxNorm/1148399", "Acetaminophen 10 MG/ML Injectable Solution", None, None, None),
        ("RxNorm/314076", "Lisinopril 10 MG Oral Tablet", None, None, None),
        ("RxNorm/617312", "Atorvastatin 20 MG Oral Tablet", None, None, None),
        ("CVX/20", "diphtheria, tetanus toxoids and acellular pertussis vaccine", None, None, None),
    ],
    EventDomain.CONDITION: [
        ("SNOMED/44054006", "Type 2 diabetes mellitus", None, None, None),
        ("SNOMED/709044004", "Chronic kidney disease", None, None, None),
        ("SNOMED/195967001", "Asthma", None, None, None),
    ],
    EventDomain.PROCEDURE: [
        ("CPT4/93000", "Electrocardiogram, routine, with interpretation and report", None, None, None),
        ("CPT4/71046", "Radiologic examination, chest; 2 views", None, None, None),
    ],
}
_PREFIX = {
    EventDomain.MEASUREMENT: "LOINC/SYN-",
    EventDomain.DRUG: "RxNorm/SYN-",
    EventDomain.CONDITION: "SNOMED/SYN-",
    EventDomain.PROCEDURE: "CPT4/SYN-",
}
_DOMAIN_CYCLE = (EventDomain.MEASUREMENT, EventDomain.DRUG, EventDomain.CONDITION, EventDomain.PROCEDURE)


@dataclass(frozen=True)
class _VocabEntry:
    code: str
    name: str
    domain: EventDomain
    unit: str | None
    mean: float | None
    sd: float | None


def _vocabulary(size: int, rng: np.random.Generator) -> list[_VocabEntry]:
    curated = {d: list(v) for d, v in _CURATED.items()}
    out = []
    for i in range(size):
        dom = _DOMAIN_CYCLE[i % len(_DOMAIN_CYCLE)]
        if curated[dom]:
            code, name, unit, mean, sd = curated[dom].pop(0)
        else:
            code = f"{_PREFIX[dom]}{i:04d}"
            name = f"Synthetic {dom.value} concept {i:04d}"
            unit, mean, sd = (None, None, None)
            if dom is EventDomain.MEASUREMENT:
                unit = "units"
                mean = float(np.round(rng.uniform(10, 200), 1))
                sd = float(np.round(mean * rng.uniform(0.05, 0.2), 2))
        out.append(_VocabEntry(code, name, dom, unit, mean, sd))
    return out


def _prediction_time(category: str, events: Sequence[MedicalEvent], rng) -> dt.datetime:
    n = len(events)
    k = int(rng.integers(n // 2, n - 1)) if n > 2 else 1
    anchor = events[k].timestamp
    if category == "lab":
        t = anchor - dt.timedelta(minutes=1)
    else:
        t = anchor.replace(hour=23, minute=59, second=0)
    return max(t, events[0].timestamp)


def _label_model(cfg: CohortConfig, rng) -> tuple[dict[str, np.ndarray], dict[str, float]]:
    weights, intercepts = {}, {}
    cat_dir = {c: rng.normal(size=cfg.latent_dim) for c in cfg.categories}
    for t in cfg.tasks:
        own = rng.normal(size=cfg.latent_dim)
        w = 0.8 * cat_dir[t.category] / np.linalg.norm(cat_dir[t.category]) + 0.6 * own / np.linalg.norm(own)
        w = cfg.label_signal * w / np.linalg.norm(w)
        target = rng.uniform(*cfg.prevalence_range)
        if cfg.label_weights and t.task_id in cfg.label_weights:
            w = np.asarray(cfg.label_weights[t.task_id], dtype=float)
        b = _intercept_for(w, target)
        if cfg.label_intercepts and t.task_id in cfg.label_intercepts:
            b = float(cfg.label_intercepts[t.task_id])
        weights[t.task_id], intercepts[t.task_id] = w, b
    return weights, intercepts


def generate_cohort(config: CohortConfig) -> Cohort:
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    vocab = _vocabulary(cfg.vocab_size, rng)
    popularity = rng.normal(0.0, 1.0, cfg.vocab_size)
    loadings = rng.normal(0.0, 0.8, (cfg.vocab_size, cfg.latent_dim))
    weights, intercepts = _label_model(cfg, rng)
    proj_counts = rng.normal(0.0, 1.0, (cfg.vocab_size, cfg.embedding_dim)) / math.sqrt(cfg.vocab_size)
    proj_latent = rng.normal(0.0, 1.0, (cfg.latent_dim, cfg.embedding_dim))
    code_index = {v.code: i for i, v in enumerate(vocab)}

    latent = rng.normal(size=(cfg.n_patients, cfg.latent_dim))
    sequences, embeddings = [], []
    epoch0 = dt.datetime(2008, 1, 1, tzinfo=UTC)
    for p in range(cfg.n_patients):
        z = latent[p]
        pid = f"P{p:06d}"
        logits = popularity + loadings @ z
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        n_ev = int(rng.integers(cfg.events_per_patient[0], cfg.events_per_patient[1] + 1))
        codes = rng.choice(cfg.vocab_size, size=n_ev, p=probs)
        start = epoch0 + dt.timedelta(days=int(rng.integers(0, 8 * 365)), seconds=int(rng.integers(6, 20)) * 3600)
        # mostly same-visit gaps of minutes to hours, occasionally weeks between visits
        same_visit = rng.random(n_ev) < 0.75
        gaps = np.where(same_visit, rng.integers(5, 240, n_ev) * 60, rng.integers(1, 90, n_ev) * 86400)
        gaps[0] = 0
        times = [start + dt.timedelta(seconds=int(s)) for s in np.cumsum(gaps)]
        events = []
        for c, t in zip(codes, times):
            v = vocab[c]
            value = None
            if v.domain is EventDomain.MEASUREMENT:
                shift = float(loadings[c] @ z) / (np.linalg.norm(loadings[c]) + 1e-12)
                value = float(np.round(v.mean + v.sd * (0.5 * shift + rng.normal()), 1))
            events.append(MedicalEvent(v.code, t, v.domain, value, v.unit if value is not None else None))

        age_at_start = int(rng.integers(18, 86))
        birth = (start - dt.timedelta(days=int(age_at_start * 365.25 + rng.integers(0, 365)))).date()
        demographics = {
            "birth_date": birth.isoformat(),
            "sex": str(rng.choice(["female", "male"])),
            "ethnicity": str(rng.choice(["Hispanic or Latino", "Not Hispanic or Latino"])),
        }
        labels = {}
        for category in cfg.categories:
            t_k = _prediction_time(category, events, rng)
            counts = np.zeros(cfg.vocab_size)
            for ev in events:
                if ev.timestamp < t_k:
                    counts[code_index[ev.code]] += 1
            emb = (
                np.log1p(counts) @ proj_counts
                + z @ proj_latent
                + cfg.embedding_noise * rng.normal(size=cfg.embedding_dim)
            )
            cat_labels = {}
            for task in cfg.tasks_for(category):
                q = _sigmoid(weights[task.task_id] @ z + intercepts[task.task_id])
                y = int(rng.random() < q)
                labels[task.task_id] = TaskLabel(t_k, y)
                cat_labels[task.task_id] = y
            embeddings.append(EmbeddingRecord(f"{pid}/{category}", emb, cat_labels))
        sequences.append(PatientSequence(pid, tuple(events), demographics, labels))

    concepts = ConceptDictionary({v.code: Concept(v.name, v.domain) for v in vocab})
    return Cohort(cfg, sequences, embeddings, concepts, latent, weights, intercepts)


def write_cohort_files(cohort: Cohort, outdir: str | Path) -> dict[str, Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "cohort": outdir / "cohort.jsonl",
        "embeddings": outdir / "embeddings.jsonl",
        "concepts": outdir / "concepts.tsv",
    }
    write_cohort(paths["cohort"], cohort.sequences)
    write_embeddings(paths["embeddings"], cohort.embeddings)
    cohort.concepts.write_tsv(paths["concepts"])
    return paths


# ---------------------------------------------------------------------------
# test-set sampling


@dataclass(frozen=True)
class TestSetDraw:
    sequences: list[PatientSequence]
    draws: int


def sample_test_set(
    sequences: Sequence[PatientSequence],
    task_ids: Sequence[str],
    n: int = 100,
    min_pos: int = 12,
    seed: int = 0,
    max_draws: int = 10_000,
) -> TestSetDraw:
    """Redraw ``n`` random patients until every task has ``min_pos`` positives.

    Only patients labelled for all of ``task_ids`` are eligible.
    """
    pool = [s for s in sequences if all(t in s.labels for t in task_ids)]
    if len(pool) < n:
        raise InfeasibleSampleError(f"only {len(pool)} eligible patients, need {n}")
    y = np.array([[s.labels[t].label for t in task_ids] for s in pool])
    short = [t for t, total in zip(task_ids, y.sum(axis=0)) if total < min_pos]
    if short:
        raise InfeasibleSampleError(f"tasks {short} have fewer than {min_pos} positives in the whole cohort")
    rng = np.random.default_rng(seed)
    for draw in range(1, max_draws + 1):
        idx = np.sort(rng.choice(len(pool), size=n, replace=False))
        if np.all(y[idx].sum(axis=0) >= min_pos):
            return TestSetDraw([pool[i] for i in idx], draw)
    raise InfeasibleSampleError(f"no draw satisfied min_pos={min_pos} within {max_draws} attempts")


# ---------------------------------------------------------------------------
# mock model


@dataclass(frozen=True)
class MockBehavior:
    accuracy_signal: float = 2.0
    noise_temperature: float = 1.0
    invalid_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.accuracy_signal < 0 or not math.isfinite(self.accuracy_signal):
            raise ValueError("accuracy_signal must be a finite value >= 0")
        if self.noise_temperature <= 0:
            raise ValueError("noise_temperature must be > 0")
        if not 0.0 <= self.invalid_rate <= 1.0:
            raise ValueError("invalid_rate must be in [0, 1]")

    def p_yes(self, label: int) -> float:
        s = 1.0 if label == 1 else -1.0
        return 1.0 / (1.0 + math.exp(-self.accuracy_signal * s / self.noise_temperature))


@dataclass(frozen=True)
class OracleEntry:
    labels: Mapping[str, int]
    mode: str


class GroundTruthOracle:
    """Prompt fingerprint -> true labels, filled in as prompts are built."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: dict[str, OracleEntry] = {}

    def register(self, prompt: Prompt, truth: Mapping[str, int]) -> str:
        fp = prompt.fingerprint
        entry = OracleEntry({t: int(truth[t]) for t in prompt.task_ids}, prompt.mode)
        with self._lock:
            self._entries[fp] = entry
        return fp

    def lookup(self, fp: str) -> OracleEntry:
        with self._lock:
            try:
                return self._entries[fp]
            except KeyError:
                raise UnknownPromptError(f"prompt {fp[:12]} was never registered") from None

    def __len__(self):
        return len(self._entries)


_YES_TEXT = (
    "Yes.",
    "Yes, the outcome is likely given the recent events.",
    "yes - the record points toward this outcome.",
)
_NO_TEXT = (
    "No.",
    "No, the outcome is unlikely given the recent events.",
    "no - nothing in the record points toward this outcome.",
)
_FILLER = (
    "I am unable to determine this from the information provided.",
    "The patient may or may not develop this; more information is required.",
)


class MockClient:
    """Deterministic stand-in for a chat model; safe to share across threads."""

    def __init__(self, name: str, behavior: MockBehavior, oracle: GroundTruthOracle):
        self.name = name
        self.behavior = behavior
        self.oracle = oracle

    def _rng(self, fp: str, seed: int | None) -> np.random.Generator:
        return np.random.default_rng([self.behavior.seed, int(fp[:15], 16), 0 if seed is None else seed])

    def generate(self, prompt: str, params: SamplingParams) -> str:
        fp = fingerprint(prompt)
        entry = self.oracle.lookup(fp)
        rng = self._rng(fp, params.seed)
        if rng.random() < self.behavior.invalid_rate:
            return _FILLER[int(rng.integers(len(_FILLER)))]
        if entry.mode == SINGLE:
            (label,) = entry.labels.values()
            yes = rng.random() < self.behavior.p_yes(label)
            pool = _YES_TEXT if yes else _NO_TEXT
            return pool[int(rng.integers(len(pool)))]
        lines = []
        for task, label in entry.labels.items():
            yes = rng.random() < self.behavior.p_yes(label)
            lines.append(f"{task}: {'Yes' if yes else 'No'}")
        return "\n".join(lines)


def mock_client(name: str, behavior: MockBehavior, oracle: GroundTruthOracle) -> MockClient:
    return MockClient(name, behavior, oracle)


# ---------------------------------------------------------------------------
# local HTTP server speaking the chat-completion protocol


class MockServer:
    """Serve mock clients at ``{base_url}/chat/completions``.

    ``faults``, if given, sees each request body and may return an HTTP
    status to answer with instead (for exercising client retries).
    """

    def __init__(
        self,
        clients: Mapping[str, MockClient],
        host: str = "127.0.0.1",
        port: int = 0,
        faults: Callable[[dict], int | None] | None = None,
    ):
        self.clients = dict(clients)
        self.faults = faults
        self.requests = 0
        self._count_lock = threading.Lock()
        server = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):
                log.debug("mock server: " + fmt, *args)

            def _reply(self, status: int, payload: dict):
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except ValueError:
                    return self._reply(400, {"error": {"message": "invalid JSON"}})
                with server._count_lock:
                    server.requests += 1
                if not self.path.rstrip("/").endswith("/chat/completions"):
                    return self._reply(404, {"error": {"message": f"no route {self.path}"}})
                if server.faults is not None:
                    status = server.faults(body)
                    if status:
                        return self._reply(status, {"error": {"message": "injected fault"}})
                client = server.clients.get(body.get("model"))
                if client is None:
                    return self._reply(404, {"error": {"message": f"unknown model {body.get('model')!r}"}})
                user = [m["content"] for m in body.get("messages", []) if m.get("role") == "user"]
                if not user:
                    return self._reply(400, {"error": {"message": "no user message"}})
                params = SamplingParams.from_dict(body)
                n = int(body.get("n", 1))
                choices = []
                try:
                    for i in range(n):
                        seed = params.seed if n == 1 else derive_seed(params.seed, "choice", i)
                        sp = SamplingParams(params.temperature, params.max_tokens, seed, params.top_p)
                        text = client.generate(user[-1], sp)
                        choices.append(
                            {"index": i, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}
                        )
                except UnknownPromptError as exc:
                    return self._reply(400, {"error": {"message": str(exc)}})
                self._reply(200, {"object": "chat.completion", "model": client.name, "choices": choices})

        self._httpd = ThreadingHTTPServer((host, port), Handler)
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}/v1"

    def start(self) -> "MockServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
