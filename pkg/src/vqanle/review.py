"""HTTP review service: serves triplets to human raters and collects scores.

The service reads one dataset file (never mutating it), persists score
submissions to an append-only JSONL log with last-write-wins resolution per
(triplet, rater), and computes live per-criterion means and Gwet-AC2
agreement.  Rater identity is self-declared.

API (all JSON unless noted):
  GET  /api/triplets?rater=<id>&unscored=1  next unscored item + progress
  GET  /api/triplets                        all item summaries
  GET  /api/triplets/{id}                   one full item
  GET  /api/images/{id}                     the item's image (PNG; annotated
                                            with its box for visual-prompt
                                            triplets)
  POST /api/scores                          submit one ScoreRecord
  GET  /api/agreement                       per-criterion Gwet-AC2 + means
  GET  /api/export                          CSV, raters x criteria, AVG row
"""

from __future__ import annotations

import io
import json
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

from fastapi import FastAPI, HTTPException, Query, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .annotate import DEFAULT_STYLE, annotate_bbox
from .corpus import IMAGE_SUFFIXES, SceneGraphObject
from .metrics import CRITERIA, INVALID_RATING, MetricError, RATING_SCALE, gwet_ac2
from .records import STATUS_VALID, SlotRecord
from .runner import read_dataset

VALID_SCORES = set(RATING_SCALE) | {INVALID_RATING}


@dataclass
class ScoreRecord:
    triplet_id: str
    rater_id: str
    scores: dict[str, int]
    timestamp: str
    overwrites: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "triplet_id": self.triplet_id,
            "rater_id": self.rater_id,
            "scores": self.scores,
            "timestamp": self.timestamp,
            "overwrites": self.overwrites,
        }


class ScoreStore:
    """Append-only score log with in-memory last-write-wins resolution.

    Every submission is appended (duplicates keep the old line as the audit
    trail); the file is compacted to resolved state every
    ``compact_every`` appends.
    """

    def __init__(self, path: str | Path, compact_every: int = 500) -> None:
        self.path = Path(path)
        self.compact_every = compact_every
        self._lock = threading.Lock()
        self._resolved: dict[tuple[str, str], ScoreRecord] = {}
        self._appends_since_compact = 0
        if self.path.is_file():
            self._load()

    def _load(self) -> None:
        with self.path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    d = json.loads(line)
                    record = ScoreRecord(
                        triplet_id=d["triplet_id"],
                        rater_id=d["rater_id"],
                        scores={k: int(v) for k, v in d["scores"].items()},
                        timestamp=d.get("timestamp", ""),
                        overwrites=d.get("overwrites", False),
                    )
                except (json.JSONDecodeError, KeyError):
                    break  # torn tail from a crash; everything before it stands
                self._resolved[(record.triplet_id, record.rater_id)] = record

    def submit(self, triplet_id: str, rater_id: str, scores: dict[str, int]) -> ScoreRecord:
        with self._lock:
            key = (triplet_id, rater_id)
            record = ScoreRecord(
                triplet_id=triplet_id,
                rater_id=rater_id,
                scores=dict(scores),
                timestamp=datetime.now(timezone.utc).isoformat(),
                overwrites=key in self._resolved,
            )
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
            self._resolved[key] = record
            self._appends_since_compact += 1
            if self._appends_since_compact >= self.compact_every:
                self._compact_locked()
            return record

    def _compact_locked(self) -> None:
        tmp = self.path.with_suffix(".tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            for record in self._resolved.values():
                fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
        tmp.replace(self.path)
        self._appends_since_compact = 0

    def compact(self) -> None:
        with self._lock:
            self._compact_locked()

    def resolved(self) -> list[ScoreRecord]:
        with self._lock:
            return list(self._resolved.values())

    def raters(self) -> list[str]:
        with self._lock:
            return sorted({r for (_, r) in self._resolved})

    def scored_ids(self, rater_id: str) -> set[str]:
        with self._lock:
            return {t for (t, r) in self._resolved if r == rater_id}


def validate_scores(scores: dict[str, int]) -> Optional[str]:
    if set(scores) != set(CRITERIA):
        return f"scores must cover exactly the criteria {list(CRITERIA)}"
    bad = {k: v for k, v in scores.items() if v not in VALID_SCORES}
    if bad:
        return f"scores must be in {sorted(VALID_SCORES)}, got {bad}"
    return None


def per_rater_means(records: list[ScoreRecord]) -> dict[str, dict[str, float]]:
    """Mean score per criterion for each rater, ignoring -1 (invalid) flags."""
    by_rater: dict[str, dict[str, list[int]]] = {}
    for record in records:
        bucket = by_rater.setdefault(record.rater_id, {c: [] for c in CRITERIA})
        for criterion, value in record.scores.items():
            if value != INVALID_RATING:
                bucket[criterion].append(value)
    return {
        rater: {
            c: (sum(v) / len(v) if v else float("nan")) for c, v in buckets.items()
        }
        for rater, buckets in sorted(by_rater.items())
    }


def agreement_tables(records: list[ScoreRecord]) -> dict[str, list[list[int]]]:
    """Per-criterion items x raters tables over fully rated items."""
    raters = sorted({r.rater_id for r in records})
    by_item: dict[str, dict[str, ScoreRecord]] = {}
    for record in records:
        by_item.setdefault(record.triplet_id, {})[record.rater_id] = record
    complete = [tid for tid in sorted(by_item) if set(by_item[tid]) == set(raters)]
    tables: dict[str, list[list[int]]] = {}
    for criterion in CRITERIA:
        tables[criterion] = [
            [by_item[tid][r].scores[criterion] for r in raters] for tid in complete
        ]
    return tables


def export_csv(records: list[ScoreRecord]) -> str:
    """Raters as rows, criteria as columns, AVG row last (means exclude -1)."""
    means = per_rater_means(records)
    buf = io.StringIO()
    buf.write("rater," + ",".join(CRITERIA) + ",AvgScore\n")

    def fmt(v: float) -> str:
        return "" if v != v else f"{v:.10g}"  # NaN -> empty cell

    col_values: dict[str, list[float]] = {c: [] for c in CRITERIA}
    for rater, by_criterion in means.items():
        row = [by_criterion[c] for c in CRITERIA]
        present = [v for v in row if v == v]
        avg = sum(present) / len(present) if present else float("nan")
        for c, v in zip(CRITERIA, row):
            if v == v:
                col_values[c].append(v)
        buf.write(f"{rater}," + ",".join(fmt(v) for v in row) + f",{fmt(avg)}\n")

    avg_row = [
        (sum(col_values[c]) / len(col_values[c]) if col_values[c] else float("nan"))
        for c in CRITERIA
    ]
    present = [v for v in avg_row if v == v]
    overall = sum(present) / len(present) if present else float("nan")
    buf.write("AVG," + ",".join(fmt(v) for v in avg_row) + f",{fmt(overall)}\n")
    return buf.getvalue()


class ScoreSubmission(BaseModel):
    triplet_id: str
    rater_id: str
    scores: dict[str, int]


def _find_image(images_dir: Path, image_id: str) -> Optional[Path]:
    for suffix in IMAGE_SUFFIXES:
        candidate = images_dir / f"{image_id}{suffix}"
        if candidate.is_file():
            return candidate
    return None


def _item_payload(record: SlotRecord) -> dict[str, Any]:
    meta = record.meta
    vip = bool(meta and meta.box)
    return {
        "id": record.id,
        "question": record.question,
        "answer": record.answer,
        "explanation": record.explanation,
        "pipeline": meta.pipeline if meta else None,
        "image_id": record.image_id,
        "image_url": f"/api/images/{record.id}",
        "vip": vip,
        "object_name": meta.object_name if meta else None,
    }


def create_review_app(
    dataset_path: str | Path,
    images_dir: str | Path,
    scores_path: str | Path,
    compact_every: int = 500,
) -> FastAPI:
    records = [r for r in read_dataset(dataset_path) if r.status == STATUS_VALID]
    by_id = {r.id: r for r in records}
    order = [r.id for r in records]
    images_dir = Path(images_dir)
    store = ScoreStore(scores_path, compact_every=compact_every)
    annotated_cache: dict[str, bytes] = {}

    app = FastAPI(title="vqanle review")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.store = store

    @app.get("/api/triplets")
    def list_triplets(
        rater: Optional[str] = Query(default=None),
        unscored: int = Query(default=0),
    ) -> dict[str, Any]:
        if unscored:
            if not rater:
                raise HTTPException(status_code=400, detail="unscored queue needs ?rater=<id>")
            scored = store.scored_ids(rater)
            next_id = next((tid for tid in order if tid not in scored), None)
            return {
                "item": _item_payload(by_id[next_id]) if next_id else None,
                "progress": {"scored": len(scored & set(order)), "total": len(order)},
            }
        return {
            "total": len(order),
            "items": [
                {"id": tid, "image_id": by_id[tid].image_id} for tid in order
            ],
        }

    @app.get("/api/triplets/{triplet_id}")
    def get_triplet(triplet_id: str) -> dict[str, Any]:
        record = by_id.get(triplet_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown triplet id {triplet_id!r}")
        return _item_payload(record)

    @app.get("/api/images/{triplet_id}")
    def get_image(triplet_id: str) -> Response:
        record = by_id.get(triplet_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown triplet id {triplet_id!r}")
        path = _find_image(images_dir, record.image_id)
        if path is None:
            raise HTTPException(status_code=404, detail=f"no image file for {record.image_id!r}")
        data = path.read_bytes()
        meta = record.meta
        if meta and meta.box:
            if triplet_id not in annotated_cache:
                x, y, w, h = meta.box
                obj = SceneGraphObject(name=meta.object_name or "", x=x, y=y, w=w, h=h)
                annotated_cache[triplet_id] = annotate_bbox(data, obj, DEFAULT_STYLE)
            data = annotated_cache[triplet_id]
            return Response(content=data, media_type="image/png")
        media = "image/png" if path.suffix.lower() == ".png" else "image/jpeg"
        return Response(content=data, media_type=media)

    @app.post("/api/scores")
    def post_scores(submission: ScoreSubmission) -> dict[str, Any]:
        if submission.triplet_id not in by_id:
            raise HTTPException(status_code=404, detail=f"unknown triplet id {submission.triplet_id!r}")
        if not submission.rater_id.strip():
            raise HTTPException(status_code=400, detail="rater_id must be nonempty")
        problem = validate_scores(submission.scores)
        if problem:
            raise HTTPException(status_code=400, detail=problem)
        record = store.submit(submission.triplet_id, submission.rater_id, submission.scores)
        return {"ok": True, "overwrites": record.overwrites, "timestamp": record.timestamp}

    @app.get("/api/agreement")
    def get_agreement() -> dict[str, Any]:
        records_now = store.resolved()
        tables = agreement_tables(records_now)
        per_criterion: dict[str, Optional[float]] = {}
        for criterion, table in tables.items():
            try:
                per_criterion[criterion] = gwet_ac2(table)
            except MetricError:
                per_criterion[criterion] = None
        values = [v for v in per_criterion.values() if v is not None]
        means = per_rater_means(records_now)
        return {
            "per_criterion": per_criterion,
            "average": sum(values) / len(values) if values else None,
            "raters": store.raters(),
            "items_complete": len(next(iter(tables.values()), [])),
            "per_rater_means": means,
        }

    @app.get("/api/export")
    def get_export() -> Response:
        csv_text = export_csv(store.resolved())
        return Response(
            content=csv_text,
            media_type="text/csv",
            headers={"Content-Disposition": "attachment; filename=scores.csv"},
        )

    return app
