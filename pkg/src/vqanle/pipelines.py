"""The three triplet-generation pipelines, the completion parser, and the
self-consistency ensembler.

Every plan entry yields exactly one SlotRecord (valid, invalid, or skipped);
nothing is dropped silently.  Per-entry seeds derive from
(run seed, image id, slot) so outcomes are independent of worker scheduling.
"""

from __future__ import annotations

import hashlib
import random
import re
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .annotate import DEFAULT_STYLE, AnnotationStyle, annotate_bbox, encode_for_transport
from .corpus import DEFAULT_MIN_AREA_FRACTION, ImageRecord, PlanEntry, filter_objects
from .gateway import DecodingParams, Gateway, GenerationRequest, TransportError
from .metrics import (
    REASON_TOKEN_FORMAT,
    REASON_UNFINISHED,
    ValidityRules,
    ends_sentence,
    validate_triplet,
)
from .prompts import PrefixSchedule, PromptTemplate, render_prompt
from .records import (
    PIPELINE_MULTI_STEP,
    PIPELINE_SINGLE_STEP,
    PIPELINE_SINGLE_STEP_VIP,
    STATUS_INVALID,
    STATUS_SKIPPED,
    STATUS_VALID,
    SlotRecord,
    Triplet,
    TripletMeta,
)

REASON_TRANSPORT = "TransportError"
REASON_NO_OBJECT = "NoEligibleObject"

# Stage token budgets for the sequential pipeline.
MULTI_STEP_BUDGETS = {"question": 20, "answer": 25, "base": 70, "cot": 70, "react": 300}

EXPLANATION_SOURCES = ("base", "cot", "react")


class TripletParseError(Exception):
    reason = "ParseError"


class TokenFormatError(TripletParseError):
    reason = REASON_TOKEN_FORMAT


class UnfinishedGeneration(TripletParseError):
    reason = REASON_UNFINISHED


def _label_pattern(*names: str) -> re.Pattern[str]:
    alts = []
    for name in names:
        word = re.escape(name).replace(r"\ ", r"\s+")
        alts.append(rf"<\s*{word}\s*>\s*:?")
        alts.append(rf"{word}\s*:")
    return re.compile("|".join(alts), re.IGNORECASE)

_QUESTION_LABEL = _label_pattern("Question")
_ANSWER_LABEL = _label_pattern("Short Answer")
# Both explanation label dialects are accepted; real outputs mix them.
_EXPLANATION_LABEL = _label_pattern("Reasoned Answer", "Reason")
_FEEDBACK_RE = re.compile(r"Feedback\s*:::", re.IGNORECASE)


def _segments(raw: str) -> dict[str, list[str]]:
    matches: list[tuple[int, int, str]] = []
    for kind, pattern in (
        ("question", _QUESTION_LABEL),
        ("answer", _ANSWER_LABEL),
        ("explanation", _EXPLANATION_LABEL),
    ):
        for m in pattern.finditer(raw):
            matches.append((m.start(), m.end(), kind))
    matches.sort()

    out: dict[str, list[str]] = {"question": [], "answer": [], "explanation": []}
    for i, (_, end, kind) in enumerate(matches):
        stop = matches[i + 1][0] if i + 1 < len(matches) else len(raw)
        segment = _FEEDBACK_RE.sub("", raw[end:stop]).strip()
        out[kind].append(segment)
    return out


def parse_triplet(raw: str, dialect: str = "reasoned-answer") -> tuple[str, str, str]:
    """Extract (question, answer, explanation) from a labeled completion.

    Labels may be bare ("Question:") or angle-bracketed ("<Question>:");
    the explanation label is "Reason" or "Reasoned Answer" in either
    dialect.  A "Feedback:::" preamble is ignored.  For each field the first
    nonempty segment wins, so an echoed empty label skeleton is harmless.

    Raises TokenFormatError for missing labels or empty fields, and
    UnfinishedGeneration when the question or explanation stops without
    terminal punctuation (the token budget cut it off mid-sentence).
    """
    if dialect not in ("reason", "reasoned-answer"):
        raise ValueError(f"unknown dialect {dialect!r}")
    segments = _segments(raw)
    values: dict[str, str] = {}
    for kind in ("question", "answer", "explanation"):
        if not segments[kind]:
            raise TokenFormatError(f"no {kind} label found")
        values[kind] = next((s for s in segments[kind] if s), "")
        if not values[kind]:
            raise TokenFormatError(f"empty {kind} value")
    for kind in ("question", "explanation"):
        if not ends_sentence(values[kind]):
            raise UnfinishedGeneration(f"{kind} stops mid-sentence")
    return values["question"], values["answer"], values["explanation"]


# ---------------------------------------------------------------------------
# similarity and self-consistency selection


def unigram_similarity(a: str, b: str) -> float:
    """Jaccard overlap of lowercased whitespace unigram sets."""
    sa, sb = set(a.lower().split()), set(b.lower().split())
    if not sa or not sb:
        raise ValueError("similarity is undefined for empty text")
    return len(sa & sb) / len(sa | sb)


def embedding_similarity(embed: Callable[[str], "object"]) -> Callable[[str, str], float]:
    """Cosine similarity over provider embeddings, clamped to [0, 1].

    Vectors are memoized per text so re-ranking K candidates costs K embed
    calls, not K^2.
    """
    cache: dict[str, np.ndarray] = {}

    def vector(text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("similarity is undefined for empty text")
        if text not in cache:
            cache[text] = np.asarray(embed(text).values, dtype=float)
        return cache[text]

    def sim(a: str, b: str) -> float:
        va, vb = vector(a), vector(b)
        denom = float(np.linalg.norm(va) * np.linalg.norm(vb))
        if denom == 0:
            return 0.0
        return min(max(float(np.dot(va, vb) / denom), 0.0), 1.0)

    return sim


@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple[str, ...]
    source_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.candidates) != len(self.source_ids):
            raise ValueError("candidates and source ids must be parallel")


def gsc_select(
    candidates: Sequence[str], sim: Callable[[str, str], float]
) -> tuple[int, list[float]]:
    """Pick the candidate with the highest mean similarity to the others.

    scores[i] is the mean of sim(i, j) over j != i; the winner is the argmax
    with lowest-index tie-breaking.
    """
    k = len(candidates)
    if k < 2:
        raise ValueError("need at least 2 candidates to ensemble")
    scores = [
        sum(sim(candidates[i], candidates[j]) for j in range(k) if j != i) / (k - 1)
        for i in range(k)
    ]
    winner = max(range(k), key=lambda i: (scores[i], -i))
    return winner, scores


# ---------------------------------------------------------------------------
# pipelines


def entry_seed(run_seed: int, image_id: str, slot: int) -> int:
    digest = hashlib.blake2b(
        f"{run_seed}/{image_id}/{slot}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big")


class _BasePipeline:
    id: str = ""

    def __init__(
        self,
        gateway: Gateway,
        schedule: PrefixSchedule,
        corpus_by_id: dict[str, ImageRecord],
        params: DecodingParams,
        rules: ValidityRules,
        run_seed: int,
        attach_images: bool = True,
        dialect: str = "reasoned-answer",
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        self.gateway = gateway
        self.schedule = schedule
        self.corpus_by_id = corpus_by_id
        self.params = params
        self.rules = rules
        self.run_seed = run_seed
        self.attach_images = attach_images
        self.dialect = dialect
        self.clock = clock
        self._encoded: dict[str, str] = {}

    def _image_payload(self, image_id: str) -> Optional[str]:
        if not self.attach_images:
            return None
        if image_id not in self._encoded:
            record = self.corpus_by_id[image_id]
            self._encoded[image_id] = encode_for_transport(record.path.read_bytes())
        return self._encoded[image_id]

    def _meta(self, entry: PlanEntry, **extra: object) -> TripletMeta:
        return TripletMeta(
            image_id=entry.image_id,
            pipeline=self.id,
            prefix=self.schedule.prefix_for(entry.index),
            model=self.gateway.model,
            seed=entry_seed(self.run_seed, entry.image_id, entry.slot),
            **extra,  # type: ignore[arg-type]
        )

    def _record(
        self,
        entry: PlanEntry,
        status: str,
        meta: TripletMeta,
        reason: Optional[str] = None,
        stage: Optional[str] = None,
        fields: Optional[tuple[str, str, str]] = None,
    ) -> SlotRecord:
        q, a, e = fields if fields else (None, None, None)
        return SlotRecord(
            index=entry.index,
            image_id=entry.image_id,
            slot=entry.slot,
            status=status,
            reason=reason,
            stage=stage,
            question=q,
            answer=a,
            explanation=e,
            meta=meta,
        )

    def run_entry(self, entry: PlanEntry) -> SlotRecord:
        raise NotImplementedError


class SingleStepPipeline(_BasePipeline):
    """One inference per slot; the completion carries all three fields."""

    id = PIPELINE_SINGLE_STEP

    def __init__(self, gateway, template: PromptTemplate, schedule, corpus_by_id,
                 params, rules, run_seed, **kwargs) -> None:
        super().__init__(gateway, schedule, corpus_by_id, params, rules, run_seed, **kwargs)
        self.template = template

    def _bindings(self, entry: PlanEntry) -> dict[str, str]:
        return {"prefix": self.schedule.prefix_for(entry.index)}

    def run_entry(self, entry: PlanEntry) -> SlotRecord:
        started = self.clock()
        meta = self._meta(entry)
        prompt = render_prompt(self.template, self._bindings(entry))
        request = GenerationRequest(
            prompt=prompt,
            image=self._image_payload(entry.image_id),
            params=self.params,
            tag=f"{self.template.id}/{entry.image_id}/{entry.slot}",
        )
        try:
            raw = self.gateway.generate(request)
        except TransportError as exc:
            meta.raw = {"error": str(exc)}
            meta.duration_s = self.clock() - started
            return self._record(entry, STATUS_INVALID, meta, reason=REASON_TRANSPORT, stage="transport")

        meta.raw = {"completion": raw}
        try:
            fields = parse_triplet(raw, self.dialect)
        except TripletParseError as exc:
            meta.duration_s = self.clock() - started
            return self._record(entry, STATUS_INVALID, meta, reason=exc.reason)

        meta.duration_s = self.clock() - started
        reason = validate_triplet(Triplet(*fields, meta), self.rules)
        if reason is not None:
            return self._record(entry, STATUS_INVALID, meta, reason=reason)
        return self._record(entry, STATUS_VALID, meta, fields=fields)


class SingleStepVipPipeline(SingleStepPipeline):
    """Single-step with a visual prompt: one scene-graph object is chosen per
    slot (without replacement until the survivors are exhausted), its box is
    drawn onto the image, and its name joins the instruction context."""

    id = PIPELINE_SINGLE_STEP_VIP

    def __init__(self, gateway, template, schedule, corpus_by_id, params, rules,
                 run_seed, style: AnnotationStyle = DEFAULT_STYLE,
                 min_area_fraction: float = DEFAULT_MIN_AREA_FRACTION,
                 min_area_px: int = 0, **kwargs) -> None:
        super().__init__(gateway, template, schedule, corpus_by_id, params, rules,
                         run_seed, **kwargs)
        self.style = style
        self.min_area_fraction = min_area_fraction
        self.min_area_px = min_area_px

    def _pick_object(self, entry: PlanEntry):
        record = self.corpus_by_id[entry.image_id]
        survivors = filter_objects(record, self.min_area_fraction, self.min_area_px)
        if not survivors:
            return None
        order = list(range(len(survivors)))
        random.Random(f"{self.run_seed}/{entry.image_id}/objects").shuffle(order)
        return survivors[order[entry.slot % len(survivors)]]

    def run_entry(self, entry: PlanEntry) -> SlotRecord:
        started = self.clock()
        obj = self._pick_object(entry)
        if obj is None:
            meta = self._meta(entry)
            meta.duration_s = self.clock() - started
            return self._record(entry, STATUS_SKIPPED, meta, reason=REASON_NO_OBJECT)

        meta = self._meta(entry, object_name=obj.name, box=[obj.x, obj.y, obj.w, obj.h])
        prompt = render_prompt(
            self.template,
            {"prefix": self.schedule.prefix_for(entry.index), "obj name": obj.name},
        )
        image = None
        if self.attach_images:
            record = self.corpus_by_id[entry.image_id]
            annotated = annotate_bbox(record.path.read_bytes(), obj, self.style)
            image = encode_for_transport(annotated)
        request = GenerationRequest(
            prompt=prompt,
            image=image,
            params=self.params,
            tag=f"{self.template.id}/{entry.image_id}/{entry.slot}",
        )
        try:
            raw = self.gateway.generate(request)
        except TransportError as exc:
            meta.raw = {"error": str(exc)}
            meta.duration_s = self.clock() - started
            return self._record(entry, STATUS_INVALID, meta, reason=REASON_TRANSPORT, stage="transport")

        meta.raw = {"completion": raw}
        try:
            fields = parse_triplet(raw, self.dialect)
        except TripletParseError as exc:
            meta.duration_s = self.clock() - started
            return self._record(entry, STATUS_INVALID, meta, reason=exc.reason)

        meta.duration_s = self.clock() - started
        reason = validate_triplet(Triplet(*fields, meta), self.rules)
        if reason is not None:
            return self._record(entry, STATUS_INVALID, meta, reason=reason)
        return self._record(entry, STATUS_VALID, meta, fields=fields)


_REASON_SECTION = re.compile(r"(?:<\s*Reason\s*>\s*:?|Reason\s*:)", re.IGNORECASE)


def extract_react_reason(raw: str) -> str:
    """The text after the last "Reason:" label; whole text when none exists."""
    matches = list(_REASON_SECTION.finditer(raw))
    if not matches:
        return raw.strip()
    return raw[matches[-1].end():].strip()


class MultiStepPipeline(_BasePipeline):
    """Sequential question -> answer -> K explanation candidates, ensembled by
    the generalized self-consistency score."""

    id = PIPELINE_MULTI_STEP

    def __init__(self, gateway, templates: dict[str, PromptTemplate], schedule,
                 corpus_by_id, params, rules, run_seed,
                 sim: Optional[Callable[[str, str], float]] = None,
                 budgets: Optional[dict[str, int]] = None, **kwargs) -> None:
        super().__init__(gateway, schedule, corpus_by_id, params, rules, run_seed, **kwargs)
        for key in ("question", "answer", *EXPLANATION_SOURCES):
            if key not in templates:
                raise ValueError(f"multi-step pipeline needs a {key!r} template")
        self.templates = templates
        self.sim = sim if sim is not None else embedding_similarity(gateway.embed)
        self.budgets = dict(MULTI_STEP_BUDGETS)
        if budgets:
            self.budgets.update(budgets)

    def _call(self, entry: PlanEntry, stage: str, bindings: dict[str, str]) -> str:
        template = self.templates[stage]
        request = GenerationRequest(
            prompt=render_prompt(template, bindings),
            image=self._image_payload(entry.image_id),
            params=self.params.with_budget(self.budgets[stage]),
            tag=f"{template.id}/{entry.image_id}/{entry.slot}",
        )
        return self.gateway.generate(request)

    def run_entry(self, entry: PlanEntry) -> SlotRecord:
        started = self.clock()
        meta = self._meta(entry)
        raw: dict[str, object] = {}
        meta.raw = raw

        def fail(stage: str, reason: str) -> SlotRecord:
            meta.duration_s = self.clock() - started
            return self._record(entry, STATUS_INVALID, meta, reason=reason, stage=stage)

        prefix = self.schedule.prefix_for(entry.index)
        try:
            question = self._call(entry, "question", {"prefix": prefix}).strip()
            raw["question"] = question
            if not question:
                return fail("question", REASON_TOKEN_FORMAT)

            answer = self._call(entry, "answer", {"question": question}).strip()
            raw["answer"] = answer
            if not answer:
                return fail("answer", REASON_TOKEN_FORMAT)

            bindings = {"question": question, "short_answer": answer}
            candidates: list[str] = []
            for source in EXPLANATION_SOURCES:
                text = self._call(entry, source, bindings)
                candidates.append(
                    extract_react_reason(text) if source == "react" else text.strip()
                )
        except TransportError:
            return fail("transport", REASON_TRANSPORT)

        raw["candidates"] = list(candidates)
        raw["candidate_sources"] = list(EXPLANATION_SOURCES)
        if any(not c for c in candidates):
            return fail("explanation", REASON_TOKEN_FORMAT)

        winner, scores = gsc_select(candidates, self.sim)
        raw["gsc_scores"] = scores
        raw["winner"] = winner

        fields = (question, answer, candidates[winner])
        meta.duration_s = self.clock() - started
        reason = validate_triplet(Triplet(*fields, meta), self.rules)
        if reason is not None:
            return self._record(entry, STATUS_INVALID, meta, reason=reason)
        return self._record(entry, STATUS_VALID, meta, fields=fields)
