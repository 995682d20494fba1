"""Prompt templates, placeholder rendering, and the question-prefix schedule.

Template bodies live as plain-text data files with ``{placeholder}`` markers
so their content can be asserted verbatim.  The prefix schedule stratifies a
prefix pool over the run's generation slots by largest-remainder
apportionment of the configured proportions, then shuffles deterministically.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

_PLACEHOLDER_RE = re.compile(r"\{([^{}]+)\}")

STAGE_TRIPLET = "triplet"
STAGE_QUESTION = "question"
STAGE_ANSWER = "answer"
STAGE_EXPLANATION_BASE = "explanation-base"
STAGE_EXPLANATION_COT = "explanation-cot"
STAGE_EXPLANATION_REACT = "explanation-react"

STAGE_PLACEHOLDERS: dict[str, frozenset[str]] = {
    STAGE_TRIPLET: frozenset({"prefix", "obj name"}),
    STAGE_QUESTION: frozenset({"prefix"}),
    STAGE_ANSWER: frozenset({"question"}),
    STAGE_EXPLANATION_BASE: frozenset({"question", "short_answer"}),
    STAGE_EXPLANATION_COT: frozenset({"question", "short_answer"}),
    STAGE_EXPLANATION_REACT: frozenset({"question", "short_answer"}),
}

TEMPLATE_STAGES: dict[str, str] = {
    "single_step": STAGE_TRIPLET,
    "single_step_vip": STAGE_TRIPLET,
    "multi_step_question": STAGE_QUESTION,
    "multi_step_answer": STAGE_ANSWER,
    "explanation_base": STAGE_EXPLANATION_BASE,
    "explanation_cot": STAGE_EXPLANATION_COT,
    "explanation_react": STAGE_EXPLANATION_REACT,
}

# Default prefix pool and proportions for the single-step and multi-step runs.
DEFAULT_PREFIXES = [
    "what",
    "is/are (pick one that fits the most)",
    "which",
    "how many",
    "where",
]
DEFAULT_PREFIX_PROPORTIONS = [3, 2, 1, 1, 1]

# Visual-prompt runs use a fixed pool; free-form "how"/"why" prefixes are
# rejected because they invite answers needing context the image lacks.
VIP_PREFIXES = list(DEFAULT_PREFIXES)
VIP_PREFIX_PROPORTIONS = [2, 2, 2, 1, 1]
VIP_PREFIX_BLOCKLIST = frozenset({"how", "why"})


class PromptError(Exception):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str
    stage: str

    def __post_init__(self) -> None:
        allowed = STAGE_PLACEHOLDERS.get(self.stage)
        if allowed is None:
            raise PromptError(f"unknown template stage: {self.stage!r}")
        found = set(_PLACEHOLDER_RE.findall(self.body))
        stray = found - allowed
        if stray:
            raise PromptError(
                f"template {self.id!r} uses placeholders {sorted(stray)} "
                f"not declared for stage {self.stage!r}"
            )

    @property
    def placeholders(self) -> set[str]:
        return set(_PLACEHOLDER_RE.findall(self.body))


def render_prompt(template: PromptTemplate, bindings: dict[str, str]) -> str:
    """Substitute every ``{placeholder}`` in the body from ``bindings``.

    Missing bindings are an error naming the placeholder; extra bindings are
    ignored.  Text outside the markers is untouched.
    """

    def _sub(m: re.Match[str]) -> str:
        name = m.group(1)
        if name not in bindings:
            raise PromptError(f"no binding for placeholder {name!r} in template {template.id!r}")
        return bindings[name]

    return _PLACEHOLDER_RE.sub(_sub, template.body)


def packaged_templates_dir() -> Path:
    return Path(str(resources.files("vqanle").joinpath("templates")))


def load_template(template_id: str, templates_dir: str | Path | None = None) -> PromptTemplate:
    """Load a template body from ``<templates_dir>/<id>.txt``.

    Falls back to the packaged templates directory.  The trailing newline a
    text file conventionally ends with is not part of the body.
    """
    directory = Path(templates_dir) if templates_dir is not None else packaged_templates_dir()
    path = directory / f"{template_id}.txt"
    if not path.is_file():
        raise PromptError(f"template file not found: {path}")
    body = path.read_text(encoding="utf-8")
    if body.endswith("\n"):
        body = body[:-1]
    stage = TEMPLATE_STAGES.get(template_id)
    if stage is None:
        raise PromptError(f"template id {template_id!r} has no declared stage")
    return PromptTemplate(id=template_id, body=body, stage=stage)


def apportion_counts(proportions: list[int], total: int) -> list[int]:
    """Largest-remainder apportionment of ``total`` over ``proportions``.

    Each count lands within 1 of its exact proportional share; leftover units
    go to the largest fractional remainders, ties broken by index order.
    """
    if total < 0:
        raise ValueError("total must be >= 0")
    if not proportions:
        raise ValueError("proportions must be nonempty")
    if any(p <= 0 for p in proportions):
        raise ValueError("proportions must be positive integers")

    weight = sum(proportions)
    quotas = [total * p / weight for p in proportions]
    counts = [int(q) for q in quotas]
    leftover = total - sum(counts)
    by_remainder = sorted(
        range(len(proportions)), key=lambda i: (-(quotas[i] - counts[i]), i)
    )
    for i in by_remainder[:leftover]:
        counts[i] += 1
    return counts


@dataclass
class PrefixSchedule:
    prefixes: list[str]
    proportions: list[int]
    schedule: list[int]

    def __len__(self) -> int:
        return len(self.schedule)

    def prefix_for(self, slot_index: int) -> str:
        return self.prefixes[self.schedule[slot_index]]

    def counts(self) -> list[int]:
        out = [0] * len(self.prefixes)
        for i in self.schedule:
            out[i] += 1
        return out


def build_prefix_schedule(
    prefixes: list[str],
    proportions: list[int],
    total: int,
    seed: int,
) -> PrefixSchedule:
    """Stratified prefix assignment for ``total`` slots, shuffled by ``seed``.

    The multiset of assigned prefixes depends only on the proportions; the
    seed controls only the order.
    """
    if len(prefixes) != len(proportions) or not prefixes:
        raise ValueError("prefixes and proportions must be nonempty lists of equal length")
    counts = apportion_counts(proportions, total)
    schedule: list[int] = []
    for i, c in enumerate(counts):
        schedule.extend([i] * c)
    random.Random(seed).shuffle(schedule)
    return PrefixSchedule(prefixes=list(prefixes), proportions=list(proportions), schedule=schedule)


def check_vip_prefixes(prefixes: list[str], blocklist: frozenset[str] = VIP_PREFIX_BLOCKLIST) -> None:
    """Reject blocked prefixes for visual-prompt runs ("how", "why" by default)."""
    blocked = [p for p in prefixes if p.strip().lower() in blocklist]
    if blocked:
        raise PromptError(f"prefixes not allowed for visual-prompt runs: {blocked}")
