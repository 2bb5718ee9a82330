"""Clinical prediction tasks and their categories."""

from __future__ import annotations

from dataclasses import dataclass

CATEGORIES = ("operational", "lab", "diagnosis")


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    category: str
    question_text: str
    answer_labels: tuple[str, ...] = ("Yes", "No")

    def __post_init__(self):
        object.__setattr__(self, "answer_labels", tuple(self.answer_labels))
        if not self.question_text.strip():
            raise ValueError(f"{self.task_id}: empty question text")
        if len(set(self.answer_labels)) < 2:
            raise ValueError(f"{self.task_id}: need at least two distinct answer labels")
        if self.category not in CATEGORIES:
            raise ValueError(f"{self.task_id}: unknown category {self.category!r}")

    @property
    def positive_label(self) -> str:
        return self.answer_labels[0]

    @property
    def negative_label(self) -> str:
        return self.answer_labels[1]


TASKS: dict[str, TaskSpec] = {
    t.task_id: t
    for t in (
        TaskSpec(
            "long_los",
            "operational",
            "predict whether the patient's hospital length of stay will exceed seven days",
        ),
        TaskSpec(
            "icu_transfer",
            "operational",
            "predict whether the patient will be transferred to the ICU on the same day of admission",
        ),
        TaskSpec(
            "thrombocytopenia",
            "lab",
            "predict whether the patient's next platelet count will be abnormally low (thrombocytopenia)",
        ),
        TaskSpec(
            "hyperkalemia",
            "lab",
            "predict whether the patient's next potassium result will be abnormally high (hyperkalemia)",
        ),
        TaskSpec(
            "hypoglycemia",
            "lab",
            "predict whether the patient's next glucose result will be abnormally low (hypoglycemia)",
        ),
        TaskSpec(
            "hyponatremia",
            "lab",
            "predict whether the patient's next sodium result will be abnormally low (hyponatremia)",
        ),
        TaskSpec(
            "anemia",
            "lab",
            "predict whether the patient's next hemoglobin result will be abnormally low (anemia)",
        ),
        TaskSpec(
            "hypertension",
            "diagnosis",
            "predict whether the patient will receive a first diagnosis of hypertension within one year of discharge",
        ),
        TaskSpec(
            "hyperlipidemia",
            "diagnosis",
            "predict whether the patient will receive a first diagnosis of hyperlipidemia within one year of discharge",
        ),
        TaskSpec(
            "acute_mi",
            "diagnosis",
            "predict whether the patient will receive a first diagnosis of acute myocardial infarction within one year of discharge",
        ),
    )
}


def tasks_in_category(category: str, registry: dict[str, TaskSpec] | None = None) -> list[TaskSpec]:
    registry = TASKS if registry is None else registry
    out = [t for t in registry.values() if t.category == category]
    if not out:
        raise KeyError(f"no tasks in category {category!r}")
    return out
