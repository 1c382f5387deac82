"""Task definitions: what the dataset is about and how answers are formatted.

A task file uses the same flat ``key = value`` format as config files, e.g.::

    name = finance_mc
    description = Answer multiple-choice questions about corporate finance.
    domain_label = corporate finance
    answer_format = multiple_choice
    options = A,B,C,D
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .config import read_kv_file
from .errors import ValidationError

MULTIPLE_CHOICE = "multiple_choice"
YES_NO_MAYBE = "yes_no_maybe"
FINAL_ANSWER_LINE = "final_answer_line"
BOXED_LATEX = "boxed_latex"

FORMAT_KINDS = (MULTIPLE_CHOICE, YES_NO_MAYBE, FINAL_ANSWER_LINE, BOXED_LATEX)

_DEFAULT_OPTIONS = ("A", "B", "C", "D")

# Appended verbatim to every generated instruction before answer sampling.
# The two-line shape keeps replies machine-checkable.
_CHOICE_SUFFIX = (
    "Return exactly two lines and nothing else:\n"
    "Reason: <1-3 sentence explanation>\n"
    "Answer: <{choices}>"
)
_FINAL_LINE_SUFFIX = (
    "Provide a step-by-step reasoning process and then write the final "
    "numerical answer on a new line in the format: final answer: <answer>"
)
_BOXED_SUFFIX = (
    "Provide a step-by-step reasoning process and then write the final "
    "answer in the LaTeX boxed tag: $\\boxed{<answer>}$"
)


@dataclass(frozen=True)
class AnswerFormat:
    """One of four response contracts a task can demand.

    ``suffix_text`` is the literal instruction appended to prompts;
    ``options`` is populated for multiple choice only.
    """

    kind: str
    suffix_text: str
    options: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in FORMAT_KINDS:
            raise ValidationError(f"unknown answer format kind: {self.kind!r}")
        if self.kind == MULTIPLE_CHOICE:
            if not self.options:
                raise ValidationError("multiple_choice requires at least one option")
            seen = set()
            for label in self.options:
                if not label or any(ch.isspace() for ch in label) or not label.isupper():
                    raise ValidationError(
                        f"option labels must be single uppercase tokens, got {label!r}"
                    )
                if label in seen:
                    raise ValidationError(f"duplicate option label: {label!r}")
                seen.add(label)
        elif self.options:
            raise ValidationError(f"{self.kind} does not take options")
        if not self.suffix_text.strip():
            raise ValidationError("suffix_text must be non-empty")


def multiple_choice(options: tuple[str, ...] = _DEFAULT_OPTIONS) -> AnswerFormat:
    options = tuple(options)
    suffix = _CHOICE_SUFFIX.format(choices="|".join(options))
    return AnswerFormat(MULTIPLE_CHOICE, suffix, options)


def yes_no_maybe() -> AnswerFormat:
    return AnswerFormat(YES_NO_MAYBE, _CHOICE_SUFFIX.format(choices="yes|no|maybe"))


def final_answer_line() -> AnswerFormat:
    return AnswerFormat(FINAL_ANSWER_LINE, _FINAL_LINE_SUFFIX)


def boxed_latex() -> AnswerFormat:
    return AnswerFormat(BOXED_LATEX, _BOXED_SUFFIX)


_FORMAT_FACTORIES = {
    MULTIPLE_CHOICE: multiple_choice,
    YES_NO_MAYBE: yes_no_maybe,
    FINAL_ANSWER_LINE: final_answer_line,
    BOXED_LATEX: boxed_latex,
}


@dataclass(frozen=True)
class TaskDefinition:
    """A target task: free-text description plus the expected answer shape."""

    name: str
    description: str
    answer_format: AnswerFormat
    domain_label: str = ""

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ValidationError("task name must be non-empty")
        if not self.description.strip():
            raise ValidationError("task description must be non-empty")
        if not self.domain_label:
            object.__setattr__(self, "domain_label", self.name)


_TASK_KEYS = {"name", "description", "domain_label", "answer_format", "options", "suffix"}


def load_task(path: str | Path) -> TaskDefinition:
    """Read a task file; unknown keys are rejected rather than ignored."""
    path = Path(path)
    raw = read_kv_file(path)
    unknown = set(raw) - _TASK_KEYS
    if unknown:
        raise ValidationError(f"unknown task keys: {sorted(unknown)}")
    kind = raw.get("answer_format", "")
    if kind not in _FORMAT_FACTORIES:
        raise ValidationError(
            f"answer_format must be one of {FORMAT_KINDS}, got {kind!r}"
        )
    if kind == MULTIPLE_CHOICE:
        options = raw.get("options", "")
        labels = tuple(p.strip() for p in options.split(",") if p.strip()) or _DEFAULT_OPTIONS
        fmt = multiple_choice(labels)
    else:
        if "options" in raw:
            raise ValidationError(f"options is only valid for {MULTIPLE_CHOICE}")
        fmt = _FORMAT_FACTORIES[kind]()
    if "suffix" in raw:
        fmt = AnswerFormat(fmt.kind, raw["suffix"], fmt.options)
    return TaskDefinition(
        name=raw.get("name", path.stem),
        description=raw.get("description", ""),
        answer_format=fmt,
        domain_label=raw.get("domain_label", ""),
    )
