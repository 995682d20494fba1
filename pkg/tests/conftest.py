from __future__ import annotations

import json
from pathlib import Path

import pytest
import yaml
from PIL import Image

FIXTURES = Path(__file__).parent / "fixtures"

IMG_W, IMG_H = 64, 48
IMAGE_IDS = [f"img_{i:02d}" for i in range(10)]

# Invalid-case placement for the end-to-end fixture scripts, one per
# taxonomy entry (token format, unfinished, hidden context).
SS_TOKEN_FORMAT_AT = ("img_03", 1)
SS_UNFINISHED_AT = ("img_07", 2)
VIP_HIDDEN_AT = ("img_05", 0)
MS_EMPTY_QUESTION_AT = ("img_02", 1)
MS_UNFINISHED_AT = ("img_06", 0)

TOKEN_FORMAT_REPLY = (
    "<Question>: <Short Answer>\n"
    "<Answer>: Cow\n"
    "<Reason>: The object has black spot on ..."
)
UNFINISHED_REPLY = (
    '<Question>: What is the purpose of the white cart with the green "space" '
    "logo parked next to the\n"
    "<Short Answer>: Advertisement\n"
    "<Reasoned Answer>: ..."
)
HIDDEN_CONTEXT_REPLY = (
    "<Question>: How many people are in the image?\n"
    "<Short Answer>: 7\n"
    "<Reasoned Answer>: There are 7 people visible in the image, including "
    "the woman within the red rectangle."
)
VALID_TABLE_REPLY = (
    "<Question>: What is the make and model of the car in the foreground?\n"
    "<Short Answer>: The car in the foreground is a Mercedes-Benz C-Class.\n"
    "<Reasoned Answer>: The car has a distinctive front grille and logo ..."
)


def valid_reply(image_id: str, slot: int) -> str:
    return (
        "Feedback:::\n"
        f"Question: What is placed beside the {image_id} crate in view {slot}?\n"
        f"Short Answer: A striped cone near marker {slot}.\n"
        f"Reason: The cone beside the crate in {image_id} shows clear stripes and shadow."
    )


def build_fixture_corpus(root: Path) -> tuple[Path, Path]:
    """Ten small PNGs plus a scene-graph file; every image has two objects
    above the default area threshold."""
    images = root / "images"
    images.mkdir(parents=True, exist_ok=True)
    graph: dict[str, dict] = {}
    for i, image_id in enumerate(IMAGE_IDS):
        im = Image.new("RGB", (IMG_W, IMG_H), ((i * 23) % 256, (i * 67) % 256, (i * 131) % 256))
        for x in range(0, IMG_W, 8):
            for y in range(0, IMG_H, 8):
                im.putpixel((x, y), (255 - i * 10, i * 20 % 256, 30))
        im.save(images / f"{image_id}.png")
        graph[image_id] = {
            "width": IMG_W,
            "height": IMG_H,
            "objects": [
                {"name": f"crate {i}", "x": 4, "y": 4, "w": 20, "h": 12},
                {"name": f"cone {i}", "x": 30, "y": 20, "w": 16, "h": 16},
                {"name": f"speck {i}", "x": 1, "y": 1, "w": 2, "h": 2},
            ],
        }
    scene_graph = root / "scene_graph.json"
    scene_graph.write_text(json.dumps(graph, indent=2), encoding="utf-8")
    return images, scene_graph


def single_step_script() -> dict:
    exact = {
        f"single_step/{image_id}/{slot}": valid_reply(image_id, slot)
        for image_id in IMAGE_IDS
        for slot in range(3)
    }
    exact["single_step/%s/%d" % SS_TOKEN_FORMAT_AT] = TOKEN_FORMAT_REPLY
    exact["single_step/%s/%d" % SS_UNFINISHED_AT] = UNFINISHED_REPLY
    return {"exact": exact}


def vip_script() -> dict:
    exact = {
        f"single_step_vip/{image_id}/{slot}": valid_reply(image_id, slot)
        for image_id in IMAGE_IDS
        for slot in range(3)
    }
    exact["single_step_vip/%s/%d" % VIP_HIDDEN_AT] = HIDDEN_CONTEXT_REPLY
    return {"exact": exact}


def multi_step_script() -> dict:
    exact: dict[str, str] = {}
    for image_id in IMAGE_IDS:
        for slot in range(3):
            key = f"{image_id}/{slot}"
            exact[f"multi_step_question/{key}"] = (
                f"What stands out around the {image_id} marker in view {slot}?"
            )
            exact[f"multi_step_answer/{key}"] = f"A striped cone near marker {slot}."
            exact[f"explanation_base/{key}"] = (
                f"The cone in {image_id} occupies the marked cell clearly."
            )
            exact[f"explanation_cot/{key}"] = (
                f"The scene shows {image_id} first, then the cone, so the answer follows."
            )
            exact[f"explanation_react/{key}"] = (
                "Observation: the marker area is distinct.\n"
                "Thoughts: color contrast implies the cone.\n"
                "Action: compare the regions.\n"
                f"Reason: The cone region differs clearly from its surroundings in {image_id}."
            )
    empty_q = "multi_step_question/%s/%d" % MS_EMPTY_QUESTION_AT
    exact[empty_q] = ""
    unfinished = "%s/%d" % MS_UNFINISHED_AT
    exact[f"explanation_base/{unfinished}"] = "The cone sits near the crate and"
    exact[f"explanation_cot/{unfinished}"] = "The cone sits close to the crate and"
    exact[f"explanation_react/{unfinished}"] = (
        "Observation: cone.\nThoughts: crate.\nAction: look.\n"
        "Reason: The cone sits right beside the crate and"
    )
    return {"exact": exact}


def write_run_config(
    root: Path,
    pipeline: str,
    images_dir: Path,
    scene_graph: Path,
    script: dict,
    output_dir: Path,
    seed: int = 42,
) -> Path:
    prompt = {
        "single-step": "singlestep-optim",
        "single-step-vip": "nonvis-optim",
        "multi-step": "self_consistency",
    }[pipeline]
    root.mkdir(parents=True, exist_ok=True)
    script_path = root / f"script_{pipeline}.json"
    script_path.write_text(json.dumps(script, indent=2), encoding="utf-8")
    config = {
        "test_name": f"e2e-{pipeline}",
        "seed": seed,
        "dataset": {
            "name": "fixture",
            "count": 10,
            "use_scene_graph": 1 if pipeline == "single-step-vip" else 0,
            "images_dir": str(images_dir),
            "scene_graph": str(scene_graph),
        },
        "model": {
            "name": "mock",
            "path": "mock",
            "family": "mock",
            "params": {"script": str(script_path)},
        },
        "prompt": prompt,
        "run_params": {
            "num_per_inference": 3,
            "use_img_ext": 1,
        },
        "parallelism": 3,
        "output_dir": str(output_dir),
    }
    config_path = root / f"config_{pipeline}.yaml"
    config_path.write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    return config_path


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory: pytest.TempPathFactory) -> tuple[Path, Path]:
    root = tmp_path_factory.mktemp("corpus")
    return build_fixture_corpus(root)


# --- acceptance reporting -------------------------------------------------

ACCEPTANCE_RESULTS: list[tuple[str, bool]] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
