"""Repeated sampling, response sets and their archives."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from ..seeding import derive_seed
from .clients import AuditLog, ClientError, ModelClient, SamplingParams
from .parsing import Answer, parse_answer
from .prompts import Prompt

log = logging.getLogger(__name__)


class SamplingError(RuntimeError):
    """Every slot failed; ``audit`` holds the client's log, if it keeps one."""

    def __init__(self, msg: str, audit: list[dict] | None = None):
        super().__init__(msg)
        self.audit = audit or []


class FingerprintMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Generation:
    model: str
    text: str | None
    params: Mapping = field(default_factory=dict)
    error: str | None = None

    def to_dict(self) -> dict:
        return {"model": self.model, "text": self.text, "params": dict(self.params), "error": self.error}


@dataclass(frozen=True)
class ResponseSet:
    fingerprint: str
    task_ids: tuple[str, ...]
    mode: str
    generations: tuple[Generation, ...]
    parsed: Mapping[str, tuple[Answer, ...]]
    errors: int = 0

    def __post_init__(self):
        object.__setattr__(self, "task_ids", tuple(self.task_ids))
        object.__setattr__(self, "generations", tuple(self.generations))
        object.__setattr__(self, "parsed", {k: tuple(v) for k, v in self.parsed.items()})
        if set(self.parsed) != set(self.task_ids):
            raise ValueError("parsed answers do not cover exactly the response set's tasks")
        for k, v in self.parsed.items():
            if len(v) != len(self.generations):
                raise ValueError(f"{k}: {len(v)} parsed answers for {len(self.generations)} generations")

    @property
    def n(self) -> int:
        return len(self.generations)

    def valid_count(self, task_id: str) -> int:
        return sum(a is not Answer.INVALID for a in self.parsed[task_id])

    @classmethod
    def from_generations(
        cls, fingerprint: str, task_ids: Sequence[str], mode: str, generations: Sequence[Generation]
    ) -> "ResponseSet":
        per_gen = [parse_answer(g.text, task_ids, mode) for g in generations]
        parsed = {t: tuple(p[t] for p in per_gen) for t in task_ids}
        errors = sum(g.error is not None for g in generations)
        return cls(fingerprint, tuple(task_ids), mode, tuple(generations), parsed, errors)

    def to_dict(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "task_ids": list(self.task_ids),
            "mode": self.mode,
            "generations": [g.to_dict() for g in self.generations],
            "parsed": {k: [a.value for a in v] for k, v in self.parsed.items()},
            "errors": self.errors,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ResponseSet":
        """Rebuild from an archive entry, re-parsing every raw generation."""
        gens = [Generation(g["model"], g["text"], g.get("params", {}), g.get("error")) for g in d["generations"]]
        return cls.from_generations(d["fingerprint"], d["task_ids"], d["mode"], gens)


def sample_responses(
    client: ModelClient,
    prompt: Prompt,
    n: int,
    params: SamplingParams | None = None,
    max_workers: int = 1,
    use_n: bool = False,
) -> ResponseSet:
    """Collect ``n`` generations for ``prompt``.

    Slot ``i`` is sampled with seed ``derive_seed(params.seed, i)`` so that
    seeded clients are reproducible per slot. Failed slots become Invalid
    entries and are tallied in ``errors``; only a total failure raises.
    With ``use_n`` and a client offering ``generate_n``, one request asks for
    all ``n`` choices instead.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    params = params or SamplingParams()
    base = 0 if params.seed is None else params.seed
    slot_params = [
        SamplingParams(params.temperature, params.max_tokens, derive_seed(base, slot), params.top_p)
        for slot in range(n)
    ]
    text = prompt.text

    def one(sp: SamplingParams) -> Generation:
        try:
            return Generation(client.name, client.generate(text, sp), sp.to_dict())
        except ClientError as exc:
            log.warning("%s: slot failed: %s", client.name, exc)
            return Generation(client.name, None, sp.to_dict(), str(exc))

    if use_n and hasattr(client, "generate_n"):
        try:
            texts = client.generate_n(text, slot_params[0], n)
            gens = [Generation(client.name, t, slot_params[0].to_dict()) for t in texts]
        except ClientError as exc:
            gens = [Generation(client.name, None, slot_params[0].to_dict(), str(exc))] * n
    elif max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            gens = list(pool.map(one, slot_params))
    else:
        gens = [one(sp) for sp in slot_params]

    if all(g.error is not None for g in gens):
        audit = client.audit.entries if isinstance(getattr(client, "audit", None), AuditLog) else []
        raise SamplingError(f"{client.name}: all {n} generations failed ({gens[0].error})", audit)
    return ResponseSet.from_generations(prompt.fingerprint, prompt.task_ids, prompt.mode, gens)


def ensemble_response_sets(sets: Sequence[ResponseSet]) -> ResponseSet:
    """Pool the generations of several response sets for the same prompt."""
    if not sets:
        raise ValueError("nothing to ensemble")
    first = sets[0]
    for s in sets[1:]:
        if s.fingerprint != first.fingerprint:
            raise FingerprintMismatch(f"prompt fingerprints differ: {first.fingerprint[:12]} vs {s.fingerprint[:12]}")
        if s.task_ids != first.task_ids or s.mode != first.mode:
            raise FingerprintMismatch("response sets cover different tasks")
    if len(sets) == 1:
        return first
    return ResponseSet(
        fingerprint=first.fingerprint,
        task_ids=first.task_ids,
        mode=first.mode,
        generations=tuple(g for s in sets for g in s.generations),
        parsed={t: tuple(a for s in sets for a in s.parsed[t]) for t in first.task_ids},
        errors=sum(s.errors for s in sets),
    )


# ---------------------------------------------------------------------------
# archives: one JSON object per (record, prompt)


@dataclass(frozen=True)
class ArchivedRecord:
    record_id: str
    category: str
    client: str
    tasking: str
    truth: Mapping[str, int]
    response_set: ResponseSet
    prompt_text: str | None = None

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "category": self.category,
            "client": self.client,
            "tasking": self.tasking,
            "truth": dict(self.truth),
            "prompt": self.prompt_text,
            "response_set": self.response_set.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ArchivedRecord":
        return cls(
            record_id=d["record_id"],
            category=d["category"],
            client=d["client"],
            tasking=d["tasking"],
            truth={k: int(v) for k, v in d["truth"].items()},
            response_set=ResponseSet.from_dict(d["response_set"]),
            prompt_text=d.get("prompt"),
        )


def write_archive(path, records: Iterable[ArchivedRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_archive(path) -> list[ArchivedRecord]:
    with open(path, encoding="utf-8") as fh:
        return [ArchivedRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
