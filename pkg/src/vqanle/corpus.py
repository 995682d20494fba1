"""Image corpus ingestion, scene-graph object filtering, and run sampling plans.

A corpus is a directory of images plus an optional scene-graph JSON file
mapping image id -> {width, height, objects: [{name, x, y, w, h}]}, a
GQA-compatible subset.  Records without a scene-graph entry carry an empty
object list.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from PIL import Image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

# Objects below this fraction of image area are dropped by default; small
# boxes make unusable visual prompts.
DEFAULT_MIN_AREA_FRACTION = 0.02


class CorpusError(Exception):
    pass


@dataclass(frozen=True)
class SceneGraphObject:
    name: str
    x: int
    y: int
    w: int
    h: int

    @property
    def area(self) -> int:
        return self.w * self.h


@dataclass
class ImageRecord:
    id: str
    path: Path
    width: int
    height: int
    objects: list[SceneGraphObject] = field(default_factory=list)


@dataclass(frozen=True)
class PlanEntry:
    index: int
    image_id: str
    slot: int


@dataclass
class SamplingPlan:
    entries: list[PlanEntry]
    triplets_per_image: int

    def __len__(self) -> int:
        return len(self.entries)


def _clamp_object(raw: dict, width: int, height: int) -> Optional[SceneGraphObject]:
    """Build one object, clamping the box to image bounds.

    Returns None for malformed entries (missing keys, non-numeric values);
    real scene-graph data is noisy, so those are skipped rather than fatal.
    """
    try:
        name = str(raw["name"])
        x, y = int(raw["x"]), int(raw["y"])
        w, h = int(raw["w"]), int(raw["h"])
    except (KeyError, TypeError, ValueError):
        return None
    if w < 0 or h < 0:
        return None
    x0 = min(max(x, 0), width)
    y0 = min(max(y, 0), height)
    x1 = min(max(x + w, 0), width)
    y1 = min(max(y + h, 0), height)
    return SceneGraphObject(name=name, x=x0, y=y0, w=x1 - x0, h=y1 - y0)


def load_corpus(
    images_dir: str | Path,
    scene_graph_path: str | Path | None = None,
) -> tuple[list[ImageRecord], list[str]]:
    """Load all images under ``images_dir`` with their scene-graph objects.

    Returns (records sorted by id, record-level error messages).  A missing
    images directory or unreadable scene-graph file is fatal; a scene-graph
    entry pointing at a nonexistent image file is collected as a record-level
    error; malformed object entries are skipped with a warning.
    """
    images_dir = Path(images_dir)
    if not images_dir.is_dir():
        raise CorpusError(f"images directory not found: {images_dir}")

    graphs: dict[str, dict] = {}
    if scene_graph_path is not None:
        scene_graph_path = Path(scene_graph_path)
        if not scene_graph_path.is_file():
            raise CorpusError(f"scene-graph file not found: {scene_graph_path}")
        try:
            graphs = json.loads(scene_graph_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CorpusError(f"scene-graph file does not parse: {exc}") from exc
        if not isinstance(graphs, dict):
            raise CorpusError("scene-graph file must be a map of image id -> entry")

    image_paths: dict[str, Path] = {}
    errors: list[str] = []
    for p in sorted(images_dir.iterdir()):
        if p.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        if p.stem in image_paths:
            errors.append(f"duplicate image id {p.stem!r}: {image_paths[p.stem].name} and {p.name}")
            continue
        image_paths[p.stem] = p

    errors.extend(
        f"scene graph references missing image file: {image_id}"
        for image_id in sorted(graphs)
        if image_id not in image_paths
    )

    records: list[ImageRecord] = []
    for image_id in sorted(image_paths):
        path = image_paths[image_id]
        entry = graphs.get(image_id)
        if entry is not None and "width" in entry and "height" in entry:
            width, height = int(entry["width"]), int(entry["height"])
        else:
            with Image.open(path) as im:
                width, height = im.size
        if width <= 0 or height <= 0:
            errors.append(f"image {image_id} has non-positive dimensions")
            continue
        objects: list[SceneGraphObject] = []
        for raw in (entry or {}).get("objects", []):
            obj = _clamp_object(raw, width, height)
            if obj is None:
                log.warning("skipping malformed object entry for image %s: %r", image_id, raw)
                continue
            objects.append(obj)
        records.append(ImageRecord(id=image_id, path=path, width=width, height=height, objects=objects))

    return records, errors


def filter_objects(
    record: ImageRecord,
    min_area_fraction: float = DEFAULT_MIN_AREA_FRACTION,
    min_area_px: int = 0,
) -> list[SceneGraphObject]:
    """Objects covering at least ``min_area_fraction`` of the image.

    ``min_area_px`` is an alternative absolute-pixel floor; both thresholds
    must be met.  Order is preserved and the filter is monotone in either
    threshold.
    """
    image_area = record.width * record.height
    return [
        o
        for o in record.objects
        if o.area >= min_area_fraction * image_area and o.area >= min_area_px
    ]


def build_sampling_plan(
    corpus: list[ImageRecord],
    image_count: int,
    triplets_per_image: int,
    seed: int,
    require_scene_graph: bool = False,
    min_area_fraction: float = DEFAULT_MIN_AREA_FRACTION,
    min_area_px: int = 0,
) -> SamplingPlan:
    """Sample ``image_count`` eligible images and lay out generation slots.

    Sampling is uniform without replacement with a generator seeded by
    ``seed``, so plans are reproducible.  With ``require_scene_graph`` set,
    only images with at least one object surviving ``filter_objects`` are
    eligible.
    """
    if image_count < 0:
        raise ValueError("image_count must be >= 0")
    if triplets_per_image < 1:
        raise ValueError("triplets_per_image must be >= 1")

    if require_scene_graph:
        eligible = [
            r for r in corpus if filter_objects(r, min_area_fraction, min_area_px)
        ]
    else:
        eligible = list(corpus)

    if image_count > len(eligible):
        raise CorpusError(
            f"need {image_count} eligible images but only {len(eligible)} available"
        )

    rng = random.Random(seed)
    chosen = rng.sample(range(len(eligible)), image_count)
    entries = []
    index = 0
    for i in chosen:
        for slot in range(triplets_per_image):
            entries.append(PlanEntry(index=index, image_id=eligible[i].id, slot=slot))
            index += 1
    return SamplingPlan(entries=entries, triplets_per_image=triplets_per_image)
