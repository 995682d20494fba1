"""Shared data model for generated triplets and per-slot run outcomes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

STATUS_VALID = "valid"
STATUS_INVALID = "invalid"
STATUS_SKIPPED = "skipped"

PIPELINE_SINGLE_STEP = "single-step"
PIPELINE_SINGLE_STEP_VIP = "single-step-vip"
PIPELINE_MULTI_STEP = "multi-step"

PIPELINES = (PIPELINE_SINGLE_STEP, PIPELINE_SINGLE_STEP_VIP, PIPELINE_MULTI_STEP)


@dataclass
class TripletMeta:
    """Provenance attached to every slot outcome, valid or not."""

    image_id: str
    pipeline: str
    prefix: Optional[str] = None
    object_name: Optional[str] = None
    box: Optional[list[int]] = None
    model: str = ""
    seed: int = 0
    duration_s: float = 0.0
    raw: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "pipeline": self.pipeline,
            "prefix": self.prefix,
            "object_name": self.object_name,
            "box": self.box,
            "model": self.model,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "raw": self.raw,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TripletMeta":
        return cls(
            image_id=d["image_id"],
            pipeline=d["pipeline"],
            prefix=d.get("prefix"),
            object_name=d.get("object_name"),
            box=d.get("box"),
            model=d.get("model", ""),
            seed=d.get("seed", 0),
            duration_s=d.get("duration_s", 0.0),
            raw=d.get("raw", {}),
        )


@dataclass
class Triplet:
    question: str
    answer: str
    explanation: str
    meta: TripletMeta


@dataclass
class SlotRecord:
    """One generation slot of a run: a triplet, or the reason there is none.

    Every plan entry produces exactly one record, so
    ``#valid + #invalid + #skipped == plan size`` always holds.
    """

    index: int
    image_id: str
    slot: int
    status: str
    reason: Optional[str] = None
    stage: Optional[str] = None
    question: Optional[str] = None
    answer: Optional[str] = None
    explanation: Optional[str] = None
    meta: Optional[TripletMeta] = None

    @property
    def id(self) -> str:
        # Colon-joined so the id stays a single URL path segment.
        return f"{self.image_id}:{self.slot}"

    def to_triplet(self) -> Triplet:
        if self.status != STATUS_VALID:
            raise ValueError(f"slot {self.id!r} is {self.status}, not a valid triplet")
        assert self.question is not None and self.answer is not None
        assert self.explanation is not None and self.meta is not None
        return Triplet(self.question, self.answer, self.explanation, self.meta)

    def to_dict(self) -> dict[str, Any]:
        # Field order is fixed so serialized files are byte-stable.
        return {
            "id": self.id,
            "index": self.index,
            "image_id": self.image_id,
            "slot": self.slot,
            "status": self.status,
            "reason": self.reason,
            "stage": self.stage,
            "question": self.question,
            "answer": self.answer,
            "explanation": self.explanation,
            "meta": self.meta.to_dict() if self.meta is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SlotRecord":
        meta = d.get("meta")
        return cls(
            index=d["index"],
            image_id=d["image_id"],
            slot=d["slot"],
            status=d["status"],
            reason=d.get("reason"),
            stage=d.get("stage"),
            question=d.get("question"),
            answer=d.get("answer"),
            explanation=d.get("explanation"),
            meta=TripletMeta.from_dict(meta) if meta is not None else None,
        )
