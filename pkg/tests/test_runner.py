from __future__ import annotations

import json
from pathlib import Path

import pytest
import yaml
from PIL import Image

import conftest as fx
from vqanle.pipelines import parse_triplet
from vqanle.records import STATUS_VALID, SlotRecord, TripletMeta
from vqanle.runner import (
    ConfigError,
    DatasetError,
    load_config,
    parse_config,
    read_dataset,
    run_from_config,
    write_dataset,
)

FIXTURES = Path(__file__).parent / "fixtures"


def _base_config(images_dir: Path, scene_graph: Path, script: Path, out: Path) -> dict:
    return {
        "test_name": "unit",
        "seed": 42,
        "dataset": {
            "name": "fixture",
            "count": 4,
            "use_scene_graph": 0,
            "images_dir": str(images_dir),
            "scene_graph": str(scene_graph),
        },
        "model": {"name": "mock", "path": "mock", "family": "mock", "params": {"script": str(script)}},
        "prompt": "singlestep-optim",
        "run_params": {"num_per_inference": 3, "use_img_ext": 1},
        "parallelism": 2,
        "output_dir": str(out),
    }


# --- config validation -------------------------------------------------------


def test_config_missing_key_names_field_path(tmp_path):
    with pytest.raises(ConfigError, match="dataset.count"):
        parse_config({"dataset": {}, "model": {}, "run_params": {}, "prompt": "singlestep-optim"})


def test_config_mismatched_prefix_lists_name_run_params(tmp_path):
    data = {
        "dataset": {"count": 1, "images_dir": "x"},
        "model": {"name": "m", "family": "mock"},
        "prompt": "singlestep-optim",
        "run_params": {"num_per_inference": 1, "q_prefix": ["a", "b"], "q_prefix_prop": [1]},
    }
    with pytest.raises(ConfigError, match="run_params.q_prefix"):
        parse_config(data)


def test_config_unknown_prompt_set():
    data = {
        "dataset": {"count": 1, "images_dir": "x"},
        "model": {"name": "m", "family": "mock"},
        "prompt": "mystery",
        "run_params": {"num_per_inference": 1},
    }
    with pytest.raises(ConfigError, match="prompt"):
        parse_config(data)


def test_config_vip_requires_scene_graph_flag():
    data = {
        "dataset": {"count": 1, "use_scene_graph": 0, "images_dir": "x", "scene_graph": "y"},
        "model": {"name": "m", "family": "mock"},
        "prompt": "nonvis-optim",
        "run_params": {"num_per_inference": 1},
    }
    with pytest.raises(ConfigError, match="use_scene_graph"):
        parse_config(data)


def test_config_vip_blocks_how_why_prefixes():
    data = {
        "dataset": {"count": 1, "use_scene_graph": 1, "images_dir": "x", "scene_graph": "y"},
        "model": {"name": "m", "family": "mock"},
        "prompt": "nonvis-optim",
        "run_params": {"num_per_inference": 1, "q_prefix": ["why"], "q_prefix_prop": [1]},
    }
    with pytest.raises(ConfigError, match="run_params.q_prefix"):
        parse_config(data)


def test_config_remote_family_requires_base_url(monkeypatch):
    monkeypatch.delenv("VQANLE_BACKEND_URL", raising=False)
    data = {
        "dataset": {"count": 1, "images_dir": "x"},
        "model": {"name": "m", "family": "llava"},
        "prompt": "singlestep-optim",
        "run_params": {"num_per_inference": 1},
    }
    config = parse_config(data)
    from vqanle.runner import build_gateway

    with pytest.raises(ConfigError, match="base_url"):
        build_gateway(config)


def test_config_remote_family_reads_env(monkeypatch):
    monkeypatch.setenv("VQANLE_BACKEND_URL", "http://inference.internal:8000")
    monkeypatch.setenv("VQANLE_AUTH_TOKEN", "sekrit")
    data = {
        "dataset": {"count": 1, "images_dir": "x"},
        "model": {"name": "llava-hf/llava-1.5-13b-hf", "family": "llava"},
        "prompt": "singlestep-optim",
        "run_params": {"num_per_inference": 1},
    }
    from vqanle.gateway import RemoteGateway
    from vqanle.runner import build_gateway

    gateway = build_gateway(parse_config(data))
    assert isinstance(gateway, RemoteGateway)
    assert gateway.base_url == "http://inference.internal:8000"
    assert gateway.auth_token == "sekrit"


def test_config_accepts_paper_shaped_yaml(tmp_path):
    text = """
test_name: demo
seed: 42
dataset:
  name: GQA
  count: 167
  use_scene_graph: 0
  images_dir: images
model:
  name: llava-hf/llava-1.5-7b-hf
  path: llava-hf/llava-1.5-7b-hf
  family: llava
  params:
    use_8_bit: 0
    device: "cuda"
    low_cpu: 1
prompt: singlestep-optim
run_params:
  num_per_inference: 3
  use_img_ext: 1
  q_prefix: ["what", "is/are (pick one that fits the most)", "which", "how many", "where"]
  q_prefix_prop: [3,2,1,1,1]
"""
    path = tmp_path / "config.yaml"
    path.write_text(text)
    config = load_config(path)
    assert config.count == 167
    assert config.num_per_inference == 3
    assert config.q_prefix_prop == [3, 2, 1, 1, 1]
    assert config.pipeline == "single-step"
    assert config.decoding.max_new_tokens == 1500


def test_config_unknown_top_level_key_warns_not_fails(caplog):
    data = {
        "dataset": {"count": 1, "images_dir": "x"},
        "model": {"name": "m", "family": "mock"},
        "prompt": "singlestep-optim",
        "run_params": {"num_per_inference": 1},
        "surprise": True,
    }
    with caplog.at_level("WARNING"):
        parse_config(data)
    assert any("surprise" in r.message for r in caplog.records)


# --- dataset persistence -------------------------------------------------------


def _mixed_records(n=100) -> list[SlotRecord]:
    out = []
    for i in range(n):
        status = STATUS_VALID if i % 3 else "invalid"
        meta = TripletMeta(image_id=f"im{i}", pipeline="single-step", prefix="what", seed=i)
        if status == STATUS_VALID:
            out.append(
                SlotRecord(index=i, image_id=f"im{i}", slot=0, status=status,
                           question=f"What is {i}?", answer=f"Item {i}.",
                           explanation=f"Because {i}.", meta=meta)
            )
        else:
            out.append(
                SlotRecord(index=i, image_id=f"im{i}", slot=0, status="invalid",
                           reason="TokenFormatError", meta=meta)
            )
    return out


def test_dataset_round_trip(tmp_path):
    records = _mixed_records()
    path = write_dataset(records, tmp_path / "data.jsonl")
    assert read_dataset(path) == records


def test_dataset_truncated_line_names_line_number(tmp_path):
    path = write_dataset(_mixed_records(3), tmp_path / "data.jsonl")
    text = path.read_text().splitlines()
    text[1] = text[1][: len(text[1]) // 2]
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(DatasetError, match="line 2"):
        read_dataset(path)


def test_dataset_golden_record_serialization(tmp_path):
    q, a, e = parse_triplet(fx.VALID_TABLE_REPLY)
    record = SlotRecord(
        index=0, image_id="img_00", slot=0, status="valid",
        question=q, answer=a, explanation=e,
        meta=TripletMeta(image_id="img_00", pipeline="single-step", prefix="what",
                         model="mock", seed=12345, duration_s=0.0,
                         raw={"completion": fx.VALID_TABLE_REPLY}),
    )
    path = write_dataset([record], tmp_path / "golden.jsonl")
    assert path.read_bytes() == (FIXTURES / "golden_record.jsonl").read_bytes()


# --- run orchestration ----------------------------------------------------------


def test_run_from_config_writes_outputs(tmp_path, fixture_corpus):
    images_dir, scene_graph = fixture_corpus
    script = tmp_path / "script.json"
    script.write_text(json.dumps(fx.single_step_script()))
    out = tmp_path / "out"
    config_path = tmp_path / "config.yaml"
    config_path.write_text(yaml.safe_dump(_base_config(images_dir, scene_graph, script, out)))

    result = run_from_config(config_path)
    assert result.manifest.plan_size == 12
    totals = result.manifest.totals
    assert totals["valid"] + totals["invalid"] + totals["skipped"] == 12
    assert len(result.manifest.ledger) == 12
    assert result.dataset_path.is_file() and result.invalid_path.is_file()
    manifest_on_disk = json.loads(result.manifest_path.read_text())
    assert manifest_on_disk["totals"] == totals


def test_run_byte_identical_across_reruns(tmp_path, fixture_corpus):
    images_dir, scene_graph = fixture_corpus
    script = tmp_path / "script.json"
    script.write_text(json.dumps(fx.single_step_script()))
    config = _base_config(images_dir, scene_graph, script, tmp_path / "o1")
    config_path = tmp_path / "config.yaml"
    config_path.write_text(yaml.safe_dump(config))

    first = run_from_config(config_path)
    second = run_from_config(config_path, output_dir=tmp_path / "o2")
    assert first.dataset_path.read_bytes() == second.dataset_path.read_bytes()
    assert first.invalid_path.read_bytes() == second.invalid_path.read_bytes()


def test_run_resume_skips_completed_slots(tmp_path, fixture_corpus):
    images_dir, scene_graph = fixture_corpus
    script = tmp_path / "script.json"
    script.write_text(json.dumps(fx.single_step_script()))
    config = _base_config(images_dir, scene_graph, script, tmp_path / "full")
    config_path = tmp_path / "config.yaml"
    config_path.write_text(yaml.safe_dump(config))
    full = run_from_config(config_path)

    # Fake an interrupted run: progress holds all but two slots, one of them
    # carrying a marker text the script would never produce.
    resumed_dir = tmp_path / "resumed"
    resumed_dir.mkdir()
    progress = resumed_dir / "progress.jsonl"
    lines = [json.dumps({"config_sha256": full.manifest.config_sha256})]
    for record in full.records:
        if record.index in (0, 7):
            continue
        d = record.to_dict()
        if record.index == 5:
            d["question"] = "Was this slot preserved on resume?"
        lines.append(json.dumps(d, ensure_ascii=False))
    progress.write_text("\n".join(lines) + "\n")

    resumed = run_from_config(config_path, resume=True, output_dir=resumed_dir)
    assert resumed.manifest.plan_size == 12
    by_index = {r.index: r for r in resumed.records}
    assert by_index[5].question == "Was this slot preserved on resume?"
    assert by_index[0].status in ("valid", "invalid")
    assert len(resumed.records) == 12


def test_run_from_paper_scale_config(tmp_path):
    # a Table-6-shaped config (count 167, 3 per image) lays out 501 slots
    images = tmp_path / "imgs"
    images.mkdir()
    for i in range(167):
        Image.new("RGB", (32, 24), (i % 256, 10, 10)).save(images / f"g{i:03d}.png")
    config = {
        "test_name": "scale",
        "seed": 42,
        "dataset": {"name": "GQA", "count": 167, "use_scene_graph": 0, "images_dir": str(images)},
        "model": {"name": "mock", "family": "mock", "params": {}},
        "prompt": "singlestep-optim",
        "run_params": {
            "num_per_inference": 3,
            "use_img_ext": 0,
            "q_prefix": ["what", "is/are (pick one that fits the most)", "which", "how many", "where"],
            "q_prefix_prop": [3, 2, 1, 1, 1],
        },
        "parallelism": 8,
        "output_dir": str(tmp_path / "out"),
    }
    config_path = tmp_path / "config.yaml"
    config_path.write_text(yaml.safe_dump(config))
    result = run_from_config(config_path)
    assert result.manifest.plan_size == 501
    # unscripted mock filler never parses into a labeled triplet
    assert result.manifest.totals["invalid"] == 501
