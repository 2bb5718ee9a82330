"""Shared fixtures: random sequences, the leakage check, tiny configs, gradient checks."""

import datetime as dt
import re

import numpy as np

from ehruq import decoder as dec
from ehruq.decoder import DecoderConfig
from ehruq.ehr_core import (
    Concept,
    ConceptDictionary,
    EventDomain,
    MedicalEvent,
    PatientSequence,
    TaskLabel,
    render_timeline,
    truncate_sequence,
)

DOMAINS = [EventDomain.DRUG, EventDomain.MEASUREMENT, EventDomain.CONDITION, EventDomain.PROCEDURE]
EPOCH = dt.datetime(2012, 1, 1, tzinfo=dt.timezone.utc)

# every concept name is unique and not a substring of another one
CONCEPTS = ConceptDictionary(
    {f"X/{i}": Concept(f"concept-{i:03d}-q", DOMAINS[i % len(DOMAINS)]) for i in range(60)}
)


def random_sequence(rng: np.random.Generator, pid: str = "p", max_events: int = 40) -> PatientSequence:
    n = int(rng.integers(0, max_events + 1))
    # minutes over ~3 years, with deliberate same-day clusters and exact duplicates
    offsets = np.sort(rng.integers(0, 3 * 365 * 24 * 60, size=n) // int(rng.choice([1, 60, 720])))
    events = []
    for off in offsets:
        i = int(rng.integers(0, 60))
        dom = DOMAINS[i % len(DOMAINS)]
        value = float(np.round(rng.normal(100, 20), 1)) if dom is EventDomain.MEASUREMENT else None
        events.append(MedicalEvent(f"X/{i}", EPOCH + dt.timedelta(minutes=int(off)), dom, value, "mg" if value else None))
    start = events[0].timestamp if events else EPOCH
    label_t = start + dt.timedelta(minutes=int(rng.integers(0, 4 * 365 * 24 * 60)))
    demo = {"birth_date": "1950-03-04", "sex": str(rng.choice(["F", "M"]))}
    return PatientSequence(pid, events, demo, {"t": TaskLabel(label_t, int(rng.integers(0, 2)))})


def random_instant(rng: np.random.Generator) -> dt.datetime:
    return EPOCH + dt.timedelta(minutes=int(rng.integers(-1000, 3 * 365 * 24 * 60 + 1000)))


_DAY = re.compile(r"^On (\w+ \d+, \d{4}):$", re.M)


def leaked_events(seq: PatientSequence, t_k: dt.datetime, budget: int = 100_000) -> list[str]:
    """Problems found when rendering ``truncate(seq, t_k)``; empty means no leak.

    Checks that every rendered day holds only pre-``t_k`` events, that no
    concept seen only at or after ``t_k`` is named, and that the number of
    events stated for each day equals the pre-``t_k`` count for that day.
    """
    narrative = render_timeline(truncate_sequence(seq, t_k), CONCEPTS, budget, at=t_k)
    text = narrative.text
    problems = []
    before = [e for e in seq.events if e.timestamp < t_k]
    after_only = {e.code for e in seq.events if e.timestamp >= t_k} - {e.code for e in before}
    for code in after_only:
        if CONCEPTS[code].name in text:
            problems.append(f"post-cutoff concept {code} named")
    allowed_days = {f"{d:%B} {d.day}, {d.year}" for d in (e.timestamp.date() for e in before)}
    for day in _DAY.findall(text):
        if day not in allowed_days:
            problems.append(f"day {day} has no pre-cutoff events")
    words = {w: i for i, w in enumerate(
        "Zero One Two Three Four Five Six Seven Eight Nine Ten Eleven Twelve Thirteen "
        "Fourteen Fifteen Sixteen Seventeen Eighteen Nineteen Twenty".split())}
    stated = 0
    for m in re.finditer(r"^(\w+) [\w ]+? events?, \"", text, re.M):
        stated += words[m.group(1)] if m.group(1) in words else int(m.group(1))
    if stated != narrative.included_events or narrative.included_events > len(before):
        problems.append(f"{stated} events stated, {len(before)} before cutoff")
    return problems


TINY = {
    "synth": {"n_patients": 120, "embedding_dim": 8, "vocab_size": 30, "events_per_patient": [4, 10]},
    "whitebox": {
        "n_train": 80,
        "n_test": 40,
        "ensemble_size": 2,
        "mc_passes": 3,
        "decoder": {"hidden_dim": 8, "task_embed_dim": 4, "epochs": 2, "batch_size": 32},
    },
    "blackbox": {
        "serve_mocks": False,
        "n_records": 20,
        "min_positives": 2,
        "n_responses": 3,
        "token_budget": 400,
    },
}


def write_config(path, **sections):
    """YAML config starting from TINY; mapping sections are merged one level deep."""
    import yaml

    data = {k: dict(v) for k, v in TINY.items()}
    for k, v in sections.items():
        if isinstance(v, dict) and k in data:
            data[k] = {**data[k], **v}
        else:
            data[k] = v
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


# decoder gradient check ---------------------------------------------------


def small_config(rng, n_tasks=None, dropout=None, weight_decay=0.0):
    n_tasks = n_tasks or int(rng.integers(1, 4))
    return DecoderConfig(
        tasks=tuple(f"t{i}" for i in range(n_tasks)),
        input_dim=int(rng.integers(1, 9)),
        task_embed_dim=int(rng.integers(1, 5)),
        hidden_dim=int(rng.integers(1, 9)),
        dropout=float(rng.choice([0.0, 0.3, 0.5])) if dropout is None else dropout,
        seed=int(rng.integers(0, 2**31)),
        weight_decay=weight_decay,
    )


def numeric_grad(d, x, y, mask, name, h=1e-5):
    params = d.parameters()
    base = params[name]
    g = np.zeros_like(base, dtype=float)
    for idx in np.ndindex(base.shape):
        out = []
        for sign in (1, -1):
            p = base.copy()
            p[idx] += sign * h
            loss, _ = dec.loss_and_grad(d.with_parameters({**params, name: p}), x, y, mask)
            out.append(loss)
        g[idx] = (out[0] - out[1]) / (2 * h)
    return g


def gradient_rel_error(seed: int) -> float:
    """Worst relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(seed)
    cfg = small_config(rng, weight_decay=float(rng.choice([0.0, 0.01])))
    d = dec.init_decoder(cfg)
    # random biases keep ReLU pre-activations away from the kink at 0
    d = d.with_parameters({**d.parameters(), "b1": rng.normal(0, 0.5, cfg.hidden_dim), "b2": np.asarray(rng.normal())})
    b = int(rng.integers(1, 6))
    x = rng.normal(size=(b, cfg.input_dim))
    y = rng.integers(0, 2, size=(b, len(cfg.tasks))).astype(float)
    mask = dec.dropout_mask(rng, (b * len(cfg.tasks), cfg.hidden_dim), cfg.dropout)
    _, grads = dec.loss_and_grad(d, x, y, mask)
    worst = 0.0
    for name in dec.PARAM_NAMES:
        num = numeric_grad(d, x, y, mask, name)
        ana = np.asarray(grads[name])
        denom = max(np.linalg.norm(num) + np.linalg.norm(ana), 1e-12)
        worst = max(worst, float(np.linalg.norm(num - ana) / denom))
    return worst
