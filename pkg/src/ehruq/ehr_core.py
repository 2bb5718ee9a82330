"""Longitudinal medical-code sequences, concept lookup and narrative rendering.

A patient is a time-ordered list of coded events plus demographics and
per-task labels. Before a sequence is shown to any predictor it is cut at
the task's prediction time (events strictly before it survive), and for
text models it is rendered into a dated, plain-language timeline using a
flat concept dictionary.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import json
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

log = logging.getLogger(__name__)

UTC = dt.timezone.utc


class EventDomain(str, enum.Enum):
    DRUG = "drug"
    MEASUREMENT = "measurement"
    CONDITION = "condition"
    PROCEDURE = "procedure"
    DEMOGRAPHIC = "demographic"
    OTHER = "other"


class ConceptDictionaryError(ValueError):
    pass


class UnknownConceptError(KeyError):
    """Raised by ``ConceptDictionary[code]`` when the code has no entry."""


class AgeError(ValueError):
    pass


def parse_instant(value: str | dt.datetime | dt.date) -> dt.datetime:
    """Coerce ISO-8601 text or a date/datetime into an aware UTC datetime.

    Naive values are taken to be UTC already. Sub-second precision is dropped.
    """
    if isinstance(value, str):
        text = value.strip()
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        value = dt.datetime.fromisoformat(text)
    elif isinstance(value, dt.date) and not isinstance(value, dt.datetime):
        value = dt.datetime(value.year, value.month, value.day)
    if value.tzinfo is None:
        value = value.replace(tzinfo=UTC)
    return value.astimezone(UTC).replace(microsecond=0)


def format_instant(value: dt.datetime) -> str:
    return value.astimezone(UTC).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class MedicalEvent:
    code: str
    timestamp: dt.datetime
    domain: EventDomain
    value: float | None = None
    unit: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "timestamp", parse_instant(self.timestamp))
        object.__setattr__(self, "domain", EventDomain(self.domain))
        if self.value is not None:
            if self.domain is not EventDomain.MEASUREMENT:
                raise ValueError(f"{self.code}: only measurement events carry a value")
            object.__setattr__(self, "value", float(self.value))

    def to_dict(self) -> dict:
        out = {
            "code": self.code,
            "timestamp": format_instant(self.timestamp),
            "domain": self.domain.value,
        }
        if self.value is not None:
            out["value"] = self.value
        if self.unit is not None:
            out["unit"] = self.unit
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "MedicalEvent":
        return cls(
            code=d["code"],
            timestamp=d["timestamp"],
            domain=d["domain"],
            value=d.get("value"),
            unit=d.get("unit"),
        )


@dataclass(frozen=True)
class TaskLabel:
    prediction_time: dt.datetime
    label: int

    def __post_init__(self):
        object.__setattr__(self, "prediction_time", parse_instant(self.prediction_time))
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        object.__setattr__(self, "label", int(self.label))


@dataclass(frozen=True)
class PatientSequence:
    """One patient's coded history.

    ``events`` must be sorted by timestamp. Every label's prediction time has
    to fall at or after the first event, unless the sequence has no events
    (which is what truncation before the first event produces).
    """

    patient_id: str
    events: tuple[MedicalEvent, ...]
    demographics: Mapping[str, str] = field(default_factory=dict)
    labels: Mapping[str, TaskLabel] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "demographics", dict(self.demographics))
        object.__setattr__(self, "labels", dict(self.labels))
        times = [e.timestamp for e in self.events]
        if any(a > b for a, b in zip(times, times[1:])):
            raise ValueError(f"patient {self.patient_id}: events are not in time order")
        if times:
            for task_id, lab in self.labels.items():
                if lab.prediction_time < times[0]:
                    raise ValueError(
                        f"patient {self.patient_id}: prediction time for {task_id} "
                        "precedes the first event"
                    )

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "demographics": dict(self.demographics),
            "events": [e.to_dict() for e in self.events],
            "labels": {
                k: {"prediction_time": format_instant(v.prediction_time), "label": v.label}
                for k, v in self.labels.items()
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PatientSequence":
        return cls(
            patient_id=str(d["patient_id"]),
            events=tuple(MedicalEvent.from_dict(e) for e in d.get("events", ())),
            demographics=d.get("demographics", {}),
            labels={
                k: TaskLabel(v["prediction_time"], v["label"])
                for k, v in d.get("labels", {}).items()
            },
        )


@dataclass(frozen=True)
class Concept:
    name: str
    domain: EventDomain


@dataclass(frozen=True)
class ConceptDictionary:
    entries: Mapping[str, Concept]
    duplicate_count: int = 0

    def __getitem__(self, code: str) -> Concept:
        try:
            return self.entries[code]
        except KeyError:
            raise UnknownConceptError(code) from None

    def __contains__(self, code: object) -> bool:
        return code in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, code: str) -> Concept | None:
        return self.entries.get(code)

    def write_tsv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["concept_id", "concept_name", "domain"])
            for code, c in self.entries.items():
                w.writerow([code, c.name, c.domain.value])


@dataclass(frozen=True)
class ClinicalNarrative:
    text: str
    token_estimate: int
    included_events: int
    truncated: bool
    unknown_codes: int = 0


def load_concept_dictionary(path: str | Path) -> ConceptDictionary:
    """Read a ``concept_id<TAB>concept_name<TAB>domain`` TSV.

    Duplicate ids keep the last row; the number of overwritten rows is
    reported as ``duplicate_count``.
    """
    path = Path(path)
    if not path.exists():
        raise ConceptDictionaryError(f"{path}: no such file")
    entries: dict[str, Concept] = {}
    duplicates = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = next(reader, None)
        if header is None:
            raise ConceptDictionaryError(f"{path}: empty dictionary")
        if [h.strip() for h in header] != ["concept_id", "concept_name", "domain"]:
            raise ConceptDictionaryError(f"{path}: line 1: unexpected header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ConceptDictionaryError(
                    f"{path}: line {lineno}: expected 3 columns, got {len(row)}"
                )
            code, name, domain = (x.strip() for x in row)
            if not name:
                raise ConceptDictionaryError(f"{path}: line {lineno}: empty concept name")
            try:
                dom = EventDomain(domain)
            except ValueError:
                raise ConceptDictionaryError(
                    f"{path}: line {lineno}: unknown domain {domain!r}"
                ) from None
            if code in entries:
                duplicates += 1
            entries[code] = Concept(name, dom)
    if not entries:
        raise ConceptDictionaryError(f"{path}: empty dictionary")
    if duplicates:
        log.warning("%s: %d duplicate concept ids, last occurrence kept", path, duplicates)
    return ConceptDictionary(entries, duplicates)


def read_cohort(path: str | Path) -> list[PatientSequence]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(PatientSequence.from_dict(json.loads(line)))
    return out


def write_cohort(path: str | Path, sequences: Iterable[PatientSequence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(json.dumps(seq.to_dict(), sort_keys=True) + "\n")


def truncate_sequence(seq: PatientSequence, t_k: dt.datetime | str) -> PatientSequence:
    """Keep only events strictly before ``t_k``."""
    t_k = parse_instant(t_k)
    kept = tuple(e for e in seq.events if e.timestamp < t_k)
    if len(kept) == len(seq.events):
        return seq
    return replace(seq, events=kept)


def _birth_date(seq: PatientSequence) -> dt.date:
    raw = seq.demographics.get("birth_date")
    if not raw:
        raise AgeError(f"patient {seq.patient_id}: no birth_date in demographics")
    return parse_instant(raw).date()


def compute_age(seq: PatientSequence, at: dt.datetime | dt.date | str) -> int:
    born = _birth_date(seq)
    day = parse_instant(at).date()
    if day < born:
        raise AgeError(f"patient {seq.patient_id}: {day} is before birth date {born}")
    return day.year - born.year - ((day.month, day.day) < (born.month, born.day))


# ---------------------------------------------------------------------------
# narrative rendering

_NUMBER_WORDS = (
    "Zero One Two Three Four Five Six Seven Eight Nine Ten Eleven Twelve "
    "Thirteen Fourteen Fifteen Sixteen Seventeen Eighteen Nineteen Twenty"
).split()

_DOMAIN_NOUN = {
    EventDomain.DRUG: "clinical drug",
    EventDomain.MEASUREMENT: "measurement",
    EventDomain.CONDITION: "condition",
    EventDomain.PROCEDURE: "procedure",
    EventDomain.DEMOGRAPHIC: "demographic",
    EventDomain.OTHER: "clinical",
}


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


def _count_word(n: int) -> str:
    return _NUMBER_WORDS[n] if n < len(_NUMBER_WORDS) else str(n)


def _format_value(v: float) -> str:
    return repr(float(v))


def _event_name(code: str, concepts: ConceptDictionary) -> tuple[str, bool]:
    c = concepts.get(code)
    return (c.name, True) if c is not None else (code, False)


def _render_day(day: dt.date, events: list[MedicalEvent], concepts: ConceptDictionary):
    """Sentences for one calendar day plus the number of unknown codes seen."""
    lines = [f"On {day.strftime('%B')} {day.day}, {day.year}:"]
    unknown = 0
    # measurements of one code collapse into a single sentence at the position
    # of their first occurrence; everything else is one sentence per event
    groups: "OrderedDict[tuple, list[MedicalEvent]]" = OrderedDict()
    for i, ev in enumerate(events):
        key = ("m", ev.code) if ev.domain is EventDomain.MEASUREMENT else ("e", i)
        groups.setdefault(key, []).append(ev)
    for evs in groups.values():
        first = evs[0]
        name, known = _event_name(first.code, concepts)
        unknown += 0 if known else len(evs)
        noun = _DOMAIN_NOUN[first.domain]
        n = len(evs)
        plural = "event" if n == 1 else "events"
        head = f'{_count_word(n)} {noun} {plural}, "{name}" was recorded'
        values = [e.value for e in evs if e.value is not None]
        if values:
            label = "value" if len(values) == 1 else "values"
            units = {e.unit for e in evs if e.unit}
            suffix = f" {units.pop()}" if len(units) == 1 else ""
            head += f" with {label}: " + ", ".join(_format_value(v) for v in values) + suffix
        lines.append(head + ".")
    return lines, unknown


def _header(seq: PatientSequence, at: dt.datetime | None) -> str:
    parts = ["Patient age and demographic information:"]
    sentence = []
    if at is not None and seq.demographics.get("birth_date"):
        sentence.append(f"The patient was {compute_age(seq, at)} years old at the prediction time.")
    demo = [
        f"{k.replace('_', ' ')}: {v}"
        for k, v in sorted(seq.demographics.items())
        if k != "birth_date"
    ]
    if demo:
        sentence.append(
            "The patient has the following demographic information: " + "; ".join(demo) + "."
        )
    if not sentence:
        sentence.append("No demographic information is available.")
    parts.append(" ".join(sentence))
    return "\n".join(parts)


def render_timeline(
    seq: PatientSequence,
    concepts: ConceptDictionary,
    budget: int,
    at: dt.datetime | str | None = None,
) -> ClinicalNarrative:
    """Render a dated natural-language timeline that fits ``budget`` tokens.

    Whole calendar days are kept from the most recent backwards until the
    next older day would overflow the budget. Kept days are printed oldest
    first. ``at`` is the prediction time used for the age sentence; without
    it no age is stated. If the demographic header alone is over budget it is
    clipped to fit and the narrative is flagged as truncated.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    at = parse_instant(at) if at is not None else None
    header = _header(seq, at)

    days: "OrderedDict[dt.date, list[MedicalEvent]]" = OrderedDict()
    for ev in seq.events:
        days.setdefault(ev.timestamp.date(), []).append(ev)
    rendered = []
    for day, evs in days.items():
        lines, unknown = _render_day(day, evs, concepts)
        rendered.append(("\n".join(lines), len(evs), unknown))

    max_chars = budget * 4
    if len(header) > max_chars:
        text = header[:max_chars]
        return ClinicalNarrative(text, estimate_tokens(text), 0, True, 0)

    kept: list[tuple[str, int, int]] = []
    text = header
    for block in reversed(rendered):
        candidate = "\n".join([header, "Medical Events:", block[0], *[b[0] for b in kept]])
        if len(candidate) > max_chars:
            break
        kept.insert(0, block)
        text = candidate
    included = sum(b[1] for b in kept)
    return ClinicalNarrative(
        text=text,
        token_estimate=estimate_tokens(text),
        included_events=included,
        truncated=included < len(seq.events),
        unknown_codes=sum(b[2] for b in kept),
    )
