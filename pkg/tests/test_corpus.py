from __future__ import annotations

import json
from pathlib import Path

import pytest
from PIL import Image

from vqanle.corpus import (
    CorpusError,
    ImageRecord,
    SceneGraphObject,
    build_sampling_plan,
    filter_objects,
    load_corpus,
)


def _write_image(path: Path, size=(100, 100)) -> None:
    Image.new("RGB", size, (10, 20, 30)).save(path)


def _record(width=100, height=100, areas=()) -> ImageRecord:
    objects = [SceneGraphObject(name=f"o{i}", x=0, y=0, w=w, h=h) for i, (w, h) in enumerate(areas)]
    return ImageRecord(id="r", path=Path("r.png"), width=width, height=height, objects=objects)


def test_load_corpus_counts_objects(tmp_path):
    _write_image(tmp_path / "a.png")
    _write_image(tmp_path / "b.png")
    graph = {
        "a": {
            "width": 100,
            "height": 100,
            "objects": [
                {"name": "cow", "x": 10, "y": 20, "w": 50, "h": 40},
                {"name": "cat", "x": 0, "y": 0, "w": 5, "h": 5},
                {"name": "car", "x": 60, "y": 60, "w": 20, "h": 20},
            ],
        }
    }
    (tmp_path / "graph.json").write_text(json.dumps(graph))
    records, errors = load_corpus(tmp_path, tmp_path / "graph.json")
    assert errors == []
    assert [r.id for r in records] == ["a", "b"]
    assert [len(r.objects) for r in records] == [3, 0]


def test_load_corpus_gqa_style_entry_maps_fields(tmp_path):
    _write_image(tmp_path / "a.png")
    graph = {"a": {"width": 100, "height": 100, "objects": [{"name": "cow", "x": 10, "y": 20, "w": 50, "h": 40}]}}
    (tmp_path / "graph.json").write_text(json.dumps(graph))
    records, _ = load_corpus(tmp_path, tmp_path / "graph.json")
    obj = records[0].objects[0]
    assert obj == SceneGraphObject(name="cow", x=10, y=20, w=50, h=40)


def test_load_corpus_missing_image_file_reports_id(tmp_path):
    _write_image(tmp_path / "a.png")
    (tmp_path / "graph.json").write_text(json.dumps({"ghost": {"width": 10, "height": 10, "objects": []}}))
    records, errors = load_corpus(tmp_path, tmp_path / "graph.json")
    assert len(records) == 1
    assert len(errors) == 1
    assert "ghost" in errors[0]


def test_load_corpus_missing_manifest_fatal(tmp_path):
    with pytest.raises(CorpusError):
        load_corpus(tmp_path / "nope")
    _write_image(tmp_path / "a.png")
    with pytest.raises(CorpusError):
        load_corpus(tmp_path, tmp_path / "missing.json")


def test_load_corpus_skips_malformed_objects_and_clamps(tmp_path):
    _write_image(tmp_path / "a.png")
    graph = {
        "a": {
            "width": 100,
            "height": 100,
            "objects": [
                {"name": "ok", "x": 90, "y": 90, "w": 50, "h": 50},  # clamped
                {"name": "bad"},  # malformed, skipped
                {"x": 1, "y": 1, "w": 2},  # malformed, skipped
            ],
        }
    }
    (tmp_path / "graph.json").write_text(json.dumps(graph))
    records, _ = load_corpus(tmp_path, tmp_path / "graph.json")
    assert len(records[0].objects) == 1
    obj = records[0].objects[0]
    assert (obj.x, obj.y, obj.w, obj.h) == (90, 90, 10, 10)


def test_load_corpus_duplicate_image_id_reported(tmp_path):
    _write_image(tmp_path / "a.png")
    _write_image(tmp_path / "a.jpg")
    records, errors = load_corpus(tmp_path)
    assert len(records) == 1
    assert any("duplicate image id" in e for e in errors)


def test_filter_objects_area_threshold():
    record = _record(areas=[(5, 5), (20, 20), (100, 100)])  # areas 25, 400, 10000
    kept = filter_objects(record, min_area_fraction=0.01)
    assert [o.area for o in kept] == [400, 10000]


def test_filter_objects_zero_threshold_keeps_all():
    record = _record(areas=[(5, 5), (20, 20)])
    assert filter_objects(record, min_area_fraction=0.0) == record.objects


def test_filter_objects_full_frame_threshold():
    record = _record(areas=[(99, 100), (50, 50)])
    assert filter_objects(record, min_area_fraction=1.0) == []


def test_filter_objects_monotone_in_threshold():
    record = _record(areas=[(3, 4), (10, 10), (30, 30), (80, 90)])
    previous = filter_objects(record, 0.0)
    for threshold in (0.001, 0.005, 0.01, 0.05, 0.2, 0.8, 1.0):
        current = filter_objects(record, threshold)
        assert set(o.name for o in current) <= set(o.name for o in previous)
        previous = current


def test_filter_objects_absolute_pixel_mode():
    record = _record(areas=[(5, 5), (20, 20)])
    assert [o.area for o in filter_objects(record, 0.0, min_area_px=100)] == [400]


def _corpus(n: int, with_objects=True) -> list[ImageRecord]:
    return [
        ImageRecord(
            id=f"im{i:03d}",
            path=Path(f"im{i:03d}.png"),
            width=100,
            height=100,
            objects=[SceneGraphObject("box", 0, 0, 50, 50)] if with_objects else [],
        )
        for i in range(n)
    ]


def test_plan_size_167_by_3_is_501():
    plan = build_sampling_plan(_corpus(200), image_count=167, triplets_per_image=3, seed=7)
    assert len(plan) == 501


def test_plan_empty_when_count_zero():
    plan = build_sampling_plan(_corpus(5), image_count=0, triplets_per_image=3, seed=7)
    assert plan.entries == []


def test_plan_deterministic_for_seed():
    corpus = _corpus(30)
    a = build_sampling_plan(corpus, 10, 3, seed=99)
    b = build_sampling_plan(corpus, 10, 3, seed=99)
    assert a.entries == b.entries


def test_plan_requires_enough_eligible_images():
    corpus = _corpus(5, with_objects=False)
    with pytest.raises(CorpusError, match="eligible"):
        build_sampling_plan(corpus, 3, 2, seed=0, require_scene_graph=True)


def test_plan_entries_reference_corpus_and_slots():
    corpus = _corpus(12)
    plan = build_sampling_plan(corpus, 4, 3, seed=1, require_scene_graph=True)
    ids = {r.id for r in corpus}
    assert len(plan) == 12
    assert all(e.image_id in ids for e in plan.entries)
    assert [e.index for e in plan.entries] == list(range(12))
    assert [e.slot for e in plan.entries] == [0, 1, 2] * 4
