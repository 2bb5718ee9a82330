"""Four-part prompts: role, patient narrative, task questions, output format."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

from ..ehr_core import ClinicalNarrative
from .tasks import TaskSpec

SINGLE = "single"
MULTI = "multi"

ROLE_TEMPLATE = (
    "Role: You are an experienced physician. Read the patient's age, demographics "
    "and dated medical events below, then use your clinical knowledge and reasoning "
    "to answer the {what} listed under Tasks.\n"
    "Chain of thought:\n"
    "1. Review the patient profile: age, sex and medical history.\n"
    "2. Evaluate current findings: vital signs and laboratory values outside the normal range.\n"
    "3. Weigh the most recent events most heavily before deciding."
)

SINGLE_OUTPUT = 'Output format:\nPlease answer with "Yes" or "No".'


def fingerprint(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Prompt:
    role_block: str
    narrative_block: str
    task_block: str
    output_block: str
    tasks: tuple[TaskSpec, ...]
    mode: str = SINGLE
    head_and_tail_question: bool = True

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        for name in ("role_block", "narrative_block", "task_block", "output_block"):
            if not getattr(self, name).strip():
                raise ValueError(f"prompt {name} is empty")

    @property
    def text(self) -> str:
        blocks = [self.role_block]
        if self.head_and_tail_question:
            blocks.append(self.task_block)
        blocks += [self.narrative_block, self.task_block, self.output_block]
        return "\n\n".join(blocks)

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.text)

    @property
    def task_ids(self) -> tuple[str, ...]:
        return tuple(t.task_id for t in self.tasks)


def _multi_output(tasks: Sequence[TaskSpec]) -> str:
    ids = ", ".join(t.task_id for t in tasks)
    return (
        "Output format:\n"
        'Answer every task on its own line as "<task id>: Yes" or "<task id>: No", '
        f"using the task ids {ids}. Do not add anything else."
    )


def build_prompt(
    narrative: ClinicalNarrative | str,
    tasks: Sequence[TaskSpec],
    mode: str = SINGLE,
    head_and_tail_question: bool = True,
) -> Prompt:
    """Assemble a prompt for one task (``single``) or a whole category (``multi``)."""
    tasks = tuple(tasks)
    if not tasks:
        raise ValueError("no tasks to ask about")
    if mode == SINGLE:
        if len(tasks) != 1:
            raise ValueError(f"single mode takes exactly one task, got {len(tasks)}")
        task_block = f"Task: {tasks[0].question_text}."
        output_block = SINGLE_OUTPUT
        what = "question"
    elif mode == MULTI:
        if len(tasks) < 2:
            raise ValueError("multi mode needs at least two tasks")
        categories = {t.category for t in tasks}
        if len(categories) != 1:
            raise ValueError(f"multi mode tasks span several categories: {sorted(categories)}")
        task_block = "Tasks:\n" + "\n".join(f"- {t.task_id}: {t.question_text}." for t in tasks)
        output_block = _multi_output(tasks)
        what = "questions"
    else:
        raise ValueError(f"unknown prompt mode {mode!r}")
    text = narrative.text if isinstance(narrative, ClinicalNarrative) else narrative
    return Prompt(
        role_block=ROLE_TEMPLATE.format(what=what),
        narrative_block="Medical record:\n" + text,
        task_block=task_block,
        output_block=output_block,
        tasks=tasks,
        mode=mode,
        head_and_tail_question=head_and_tail_question,
    )
