"""Map free-text generations onto Yes / No / Invalid per task."""

from __future__ import annotations

import enum
import re
from typing import Sequence

from .prompts import MULTI, SINGLE
from .tasks import TaskSpec


class Answer(str, enum.Enum):
    YES = "Yes"
    NO = "No"
    INVALID = "Invalid"


_LEADING = re.compile(r"^[\W_]*(yes|no)\b", re.IGNORECASE)
_TOKEN = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


def _single(text: str) -> Answer:
    m = _LEADING.match(text.strip())
    if m:
        return Answer.YES if m.group(1).lower() == "yes" else Answer.NO
    # no leading answer: accept a lone answer token (e.g. "Final answer: No"),
    # anything mentioning both is ambiguous
    found = {t.lower() for t in _TOKEN.findall(text)}
    if len(found) == 1:
        return Answer.YES if found == {"yes"} else Answer.NO
    return Answer.INVALID


def _ids(tasks: Sequence[TaskSpec | str]) -> list[str]:
    return [t if isinstance(t, str) else t.task_id for t in tasks]


def _multi(text: str, task_ids: Sequence[str]) -> dict[str, Answer]:
    seen: dict[str, set[Answer]] = {t: set() for t in task_ids}
    for line in text.splitlines():
        for t in task_ids:
            m = re.match(
                rf"^[\W_]*{re.escape(t)}[\W_]*?\s*[:=\-]\s*[\W_]*(yes|no)\b",
                line.strip(),
                re.IGNORECASE,
            )
            if m:
                seen[t].add(Answer.YES if m.group(1).lower() == "yes" else Answer.NO)
    return {k: v.pop() if len(v) == 1 else Answer.INVALID for k, v in seen.items()}


def parse_answer(
    raw: str | None, tasks: Sequence[TaskSpec | str], mode: str = SINGLE
) -> dict[str, Answer]:
    """Per-task answers for one generation. ``None`` (a failed call) is Invalid.

    ``tasks`` may be task specs or bare task ids.
    """
    ids = _ids(tasks)
    if raw is None:
        return {t: Answer.INVALID for t in ids}
    if mode == SINGLE:
        if len(ids) != 1:
            raise ValueError("single-mode parsing takes exactly one task")
        return {ids[0]: _single(raw)}
    if mode == MULTI:
        return _multi(raw, ids)
    raise ValueError(f"unknown mode {mode!r}")
