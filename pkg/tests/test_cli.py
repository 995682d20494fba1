from __future__ import annotations

import json
import subprocess
import sys

import yaml

import conftest as fx
from vqanle.cli import main
from vqanle.metrics import CRITERIA
from vqanle.review import ScoreStore


def _generate(tmp_path, fixture_corpus, pipeline="single-step"):
    images_dir, scene_graph = fixture_corpus
    script = {
        "single-step": fx.single_step_script,
        "single-step-vip": fx.vip_script,
        "multi-step": fx.multi_step_script,
    }[pipeline]()
    out = tmp_path / "run"
    config_path = fx.write_run_config(tmp_path, pipeline, images_dir, scene_graph, script, out)
    assert main(["generate", "--config", str(config_path)]) == 0
    return out


def test_stats_command(tmp_path, fixture_corpus, capsys):
    out = _generate(tmp_path, fixture_corpus)
    code = main(
        ["stats", "--dataset", str(out / "dataset.jsonl"), "--expected", "30",
         "--out", str(tmp_path / "stats.json")]
    )
    assert code == 0
    printed = capsys.readouterr().out
    assert "valid %" in printed
    report = json.loads((tmp_path / "stats.json").read_text())
    assert report["valid"] == 28
    assert report["expected"] == 30


def test_evaluate_command_against_reference(tmp_path, fixture_corpus, capsys):
    out = _generate(tmp_path, fixture_corpus)
    # reference corpus: bare q/a/e objects, the loose reader's second shape
    reference = tmp_path / "reference.jsonl"
    with reference.open("w") as fh:
        for i in range(20):
            fh.write(json.dumps({
                "question": f"What color is marker {i} on the fence?",
                "answer": f"Marker {i} is green.",
                "explanation": f"The paint on marker {i} matches the fence trim nearby.",
            }) + "\n")
    report_path = tmp_path / "report.json"
    code = main([
        "evaluate",
        "--dataset", str(out / "dataset.jsonl"),
        "--reference", str(reference),
        "--manifest", str(out / "manifest.json"),
        "--baseline-tbar", "42.1",
        "--out", str(report_path),
    ])
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["stats"]["valid"] == 28
    assert set(report["similarity"]["jsd"]) == {"q", "a", "e", "avg"}
    assert 0.0 <= report["similarity"]["jsd"]["avg"] <= 1.0
    assert 0.0 <= report["rouge"]["rouge_l_f1"] <= 1.0
    printed = capsys.readouterr().out
    assert "Pearson" in printed and "JSD" in printed


def test_evaluate_with_scores_reports_agreement(tmp_path, fixture_corpus):
    out = _generate(tmp_path, fixture_corpus)
    scores_path = tmp_path / "scores.jsonl"
    store = ScoreStore(scores_path)
    records = [json.loads(l) for l in (out / "dataset.jsonl").read_text().splitlines()]
    for rater in ("r1", "r2"):
        for record in records[:5]:
            store.submit(record["id"], rater, {c: 3 for c in CRITERIA})
    reference = tmp_path / "ref.jsonl"
    reference.write_text(json.dumps({
        "question": "What is here?", "answer": "A cone.",
        "explanation": "The cone is visible in the scene today.",
    }) + "\n")
    report_path = tmp_path / "report.json"
    code = main([
        "evaluate", "--dataset", str(out / "dataset.jsonl"),
        "--reference", str(reference), "--scores", str(scores_path),
        "--out", str(report_path),
    ])
    assert code == 0
    report = json.loads(report_path.read_text())
    assert all(report["agreement"][c] == 1.0 for c in CRITERIA)


def test_evaluate_folds_in_external_scores(tmp_path, fixture_corpus):
    out = _generate(tmp_path, fixture_corpus)
    reference = tmp_path / "ref.jsonl"
    reference.write_text(json.dumps({
        "question": "What is here?", "answer": "A cone.",
        "explanation": "The cone is visible in the scene today.",
    }) + "\n")
    external = tmp_path / "external.json"
    external.write_text(json.dumps({"bertscore_f1": 0.772, "clipscore_qa": 28.49}))
    report_path = tmp_path / "report.json"
    code = main([
        "evaluate", "--dataset", str(out / "dataset.jsonl"),
        "--reference", str(reference), "--external-scores", str(external),
        "--out", str(report_path),
    ])
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["external_scores"] == {"bertscore_f1": 0.772, "clipscore_qa": 28.49}


def test_export_scores_command(tmp_path, capsys):
    scores_path = tmp_path / "scores.jsonl"
    store = ScoreStore(scores_path)
    store.submit("t1", "r1", {c: 2 for c in CRITERIA})
    code = main(["export-scores", "--scores", str(scores_path)])
    assert code == 0
    printed = capsys.readouterr().out
    assert printed.splitlines()[0] == "rater," + ",".join(CRITERIA) + ",AvgScore"
    assert printed.splitlines()[1].startswith("r1,2,")


def test_generate_bad_config_exits_nonzero(tmp_path, capsys):
    config = tmp_path / "bad.yaml"
    config.write_text(yaml.safe_dump({
        "dataset": {"count": 1, "images_dir": "x"},
        "model": {"name": "m", "family": "mock"},
        "prompt": "mystery",
        "run_params": {"num_per_inference": 1},
    }))
    assert main(["generate", "--config", str(config)]) == 2
    assert "error:" in capsys.readouterr().err


def test_console_entry_point_subprocess(tmp_path, fixture_corpus):
    images_dir, scene_graph = fixture_corpus
    out = tmp_path / "run"
    config_path = fx.write_run_config(
        tmp_path, "single-step", images_dir, scene_graph, fx.single_step_script(), out
    )
    proc = subprocess.run(
        [sys.executable, "-m", "vqanle.cli", "generate", "--config", str(config_path)],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert "valid: 28" in proc.stdout
    assert (out / "dataset.jsonl").is_file()
