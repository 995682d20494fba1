#!/usr/bin/env python3
"""Build a self-contained offline demo: a tiny corpus, a scripted mock
backend, and ready-to-run configs for all three pipelines.

Usage:
    python3 scripts/make_demo.py [--out demo] [--images 10] [--per-image 3]
    vqanle generate --config demo/config_single-step.yaml
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import yaml
from PIL import Image


def build_corpus(root: Path, count: int) -> tuple[Path, Path]:
    images = root / "images"
    images.mkdir(parents=True, exist_ok=True)
    graph = {}
    for i in range(count):
        image_id = f"demo_{i:03d}"
        im = Image.new("RGB", (96, 72), ((i * 37) % 256, (i * 91) % 256, (i * 53) % 256))
        for x in range(0, 96, 6):
            for y in range(0, 72, 6):
                im.putpixel((x, y), (240 - i, (i * 11) % 256, 60))
        im.save(images / f"{image_id}.png")
        graph[image_id] = {
            "width": 96,
            "height": 72,
            "objects": [
                {"name": "crate", "x": 6, "y": 6, "w": 30, "h": 20},
                {"name": "cone", "x": 48, "y": 30, "w": 24, "h": 24},
            ],
        }
    scene_graph = root / "scene_graph.json"
    scene_graph.write_text(json.dumps(graph, indent=2), encoding="utf-8")
    return images, scene_graph


def triplet_reply(image_id: str, slot: int) -> str:
    return (
        "Feedback:::\n"
        f"Question: What stands beside the crate in {image_id}, view {slot}?\n"
        f"Short Answer: A striped cone, number {slot}.\n"
        f"Reason: The cone next to the crate in {image_id} shows stripes and a painted number."
    )


def build_scripts(root: Path, count: int, per_image: int) -> dict[str, Path]:
    ids = [f"demo_{i:03d}" for i in range(count)]
    scripts = {}
    single = {f"single_step/{i}/{j}": triplet_reply(i, j) for i in ids for j in range(per_image)}
    vip = {f"single_step_vip/{i}/{j}": triplet_reply(i, j) for i in ids for j in range(per_image)}
    multi: dict[str, str] = {}
    for image_id in ids:
        for j in range(per_image):
            key = f"{image_id}/{j}"
            multi[f"multi_step_question/{key}"] = f"What stands out near the crate in {image_id}?"
            multi[f"multi_step_answer/{key}"] = f"A striped cone, number {j}."
            multi[f"explanation_base/{key}"] = f"The cone in {image_id} sits tight against the crate."
            multi[f"explanation_cot/{key}"] = (
                f"The crate appears first, then the cone beside it, so the answer follows for {image_id}."
            )
            multi[f"explanation_react/{key}"] = (
                "Observation: a cone and a crate.\nThoughts: they are adjacent.\n"
                f"Action: compare positions.\nReason: The cone clearly leans on the crate in {image_id}."
            )
    for name, table in (("single-step", single), ("single-step-vip", vip), ("multi-step", multi)):
        path = root / f"script_{name}.json"
        path.write_text(json.dumps({"exact": table}, indent=2), encoding="utf-8")
        scripts[name] = path
    return scripts


def build_configs(root: Path, images: Path, scene_graph: Path, scripts: dict[str, Path],
                  count: int, per_image: int) -> list[Path]:
    prompts = {
        "single-step": "singlestep-optim",
        "single-step-vip": "nonvis-optim",
        "multi-step": "self_consistency",
    }
    paths = []
    for pipeline, prompt in prompts.items():
        config = {
            "test_name": f"demo-{pipeline}",
            "seed": 42,
            "dataset": {
                "name": "demo",
                "count": count,
                "use_scene_graph": 1 if pipeline == "single-step-vip" else 0,
                "images_dir": str(images.name),
                "scene_graph": scene_graph.name,
            },
            "model": {
                "name": "mock",
                "path": "mock",
                "family": "mock",
                "params": {"script": scripts[pipeline].name},
            },
            "prompt": prompt,
            "run_params": {"num_per_inference": per_image, "use_img_ext": 1},
            "parallelism": 4,
            "output_dir": f"runs/{pipeline}",
        }
        path = root / f"config_{pipeline}.yaml"
        path.write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
        paths.append(path)
    return paths


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", type=Path, default=Path("demo"))
    parser.add_argument("--images", type=int, default=10)
    parser.add_argument("--per-image", type=int, default=3)
    args = parser.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    images, scene_graph = build_corpus(args.out, args.images)
    scripts = build_scripts(args.out, args.images, args.per_image)
    configs = build_configs(args.out, images, scene_graph, scripts, args.images, args.per_image)
    print(f"demo corpus: {args.images} images, {args.images * args.per_image} slots per pipeline")
    for path in configs:
        print(f"  vqanle generate --config {path}")


if __name__ == "__main__":
    main()
