"""Run configuration, orchestration, and persistence.

Configs are YAML documents whose keys mirror the run hyper-parameter schema
(test_name, seed, dataset, model, prompt, run_params, ...); unknown keys
warn rather than fail.  A run executes one pipeline over a sampling plan
with a bounded worker pool, writes the dataset and invalid ledgers as JSONL,
and records a manifest with per-slot outcomes and wall-clock timing.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Optional

import yaml

from .corpus import DEFAULT_MIN_AREA_FRACTION, build_sampling_plan, load_corpus
from .gateway import DecodingParams, Gateway, MockGateway, RemoteGateway
from .metrics import ValidityRules
from .pipelines import (
    EXPLANATION_SOURCES,
    MultiStepPipeline,
    SingleStepPipeline,
    SingleStepVipPipeline,
    embedding_similarity,
    unigram_similarity,
)
from .prompts import (
    DEFAULT_PREFIXES,
    DEFAULT_PREFIX_PROPORTIONS,
    VIP_PREFIXES,
    VIP_PREFIX_PROPORTIONS,
    build_prefix_schedule,
    check_vip_prefixes,
    load_template,
)
from .records import (
    PIPELINE_MULTI_STEP,
    PIPELINE_SINGLE_STEP,
    PIPELINE_SINGLE_STEP_VIP,
    STATUS_INVALID,
    STATUS_SKIPPED,
    STATUS_VALID,
    SlotRecord,
)

log = logging.getLogger(__name__)

ENV_BACKEND_URL = "VQANLE_BACKEND_URL"
ENV_AUTH_TOKEN = "VQANLE_AUTH_TOKEN"

# Template-set id (the config's `prompt:` key) -> pipeline.
PROMPT_SETS = {
    "singlestep-optim": PIPELINE_SINGLE_STEP,
    "nonvis-optim": PIPELINE_SINGLE_STEP_VIP,
    "self_consistency": PIPELINE_MULTI_STEP,
    "single-step": PIPELINE_SINGLE_STEP,
    "single-step-vip": PIPELINE_SINGLE_STEP_VIP,
    "multi-step": PIPELINE_MULTI_STEP,
}

_KNOWN_TOP_KEYS = {
    "test_name", "seed", "dataset", "model", "prompt", "run_params",
    "decoding", "parallelism", "output_dir", "templates_dir", "similarity_mode",
}


class ConfigError(Exception):
    pass


class DatasetError(Exception):
    pass


def _require(d: dict, key: str, path: str) -> Any:
    if key not in d:
        raise ConfigError(f"{path}.{key}: required key missing")
    return d[key]


@dataclass
class ModelConfig:
    name: str
    path: str
    family: str
    params: dict[str, Any] = field(default_factory=dict)


@dataclass
class RunConfig:
    test_name: str
    seed: int
    dataset_name: str
    count: int
    use_scene_graph: bool
    images_dir: Path
    scene_graph: Optional[Path]
    model: ModelConfig
    prompt: str
    num_per_inference: int
    use_img_ext: bool
    q_prefix: list[str]
    q_prefix_prop: list[int]
    decoding: DecodingParams
    parallelism: int
    output_dir: Path
    templates_dir: Optional[Path]
    similarity_mode: str
    min_area_fraction: float
    raw: dict[str, Any] = field(default_factory=dict)

    @property
    def pipeline(self) -> str:
        return PROMPT_SETS[self.prompt]

    def sha256(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode("utf-8")
        ).hexdigest()


def parse_config(data: dict[str, Any], base_dir: Path | None = None) -> RunConfig:
    """Validate a config mapping; errors carry the offending field path."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    base = base_dir or Path.cwd()

    for key in data:
        if key not in _KNOWN_TOP_KEYS:
            log.warning("ignoring unknown config key %r", key)

    dataset = _require(data, "dataset", "config")
    model_raw = _require(data, "model", "config")
    run_params = _require(data, "run_params", "config")
    prompt = str(_require(data, "prompt", "config"))
    if prompt not in PROMPT_SETS:
        raise ConfigError(f"prompt: unknown template-set id {prompt!r}")
    pipeline = PROMPT_SETS[prompt]

    count = int(_require(dataset, "count", "dataset"))
    if count < 0:
        raise ConfigError("dataset.count: must be >= 0")
    use_scene_graph = bool(dataset.get("use_scene_graph", 0))
    if pipeline == PIPELINE_SINGLE_STEP_VIP and not use_scene_graph:
        raise ConfigError("dataset.use_scene_graph: must be 1 for visual-prompt runs")
    images_dir = base / str(_require(dataset, "images_dir", "dataset"))
    scene_graph = dataset.get("scene_graph")
    scene_graph_path = base / str(scene_graph) if scene_graph else None
    if use_scene_graph and scene_graph_path is None:
        raise ConfigError("dataset.scene_graph: required when use_scene_graph is set")

    num_per_inference = int(_require(run_params, "num_per_inference", "run_params"))
    if num_per_inference < 1:
        raise ConfigError("run_params.num_per_inference: must be >= 1")
    use_img_ext = bool(run_params.get("use_img_ext", 1))

    if pipeline == PIPELINE_SINGLE_STEP_VIP:
        q_prefix = [str(p) for p in run_params.get("q_prefix", VIP_PREFIXES)]
        q_prefix_prop = [int(p) for p in run_params.get("q_prefix_prop", VIP_PREFIX_PROPORTIONS)]
        try:
            check_vip_prefixes(q_prefix)
        except Exception as exc:
            raise ConfigError(f"run_params.q_prefix: {exc}") from exc
    else:
        q_prefix = [str(p) for p in run_params.get("q_prefix", DEFAULT_PREFIXES)]
        q_prefix_prop = [int(p) for p in run_params.get("q_prefix_prop", DEFAULT_PREFIX_PROPORTIONS)]
    if len(q_prefix) != len(q_prefix_prop) or not q_prefix:
        raise ConfigError("run_params.q_prefix: prefix and proportion lists must be nonempty and equal length")
    if any(p <= 0 for p in q_prefix_prop):
        raise ConfigError("run_params.q_prefix_prop: proportions must be positive")

    decoding_raw = data.get("decoding", {})
    try:
        decoding = DecodingParams(
            temperature=float(decoding_raw.get("temperature", 1.0)),
            top_p=float(decoding_raw.get("top_p", 1.0)),
            top_k=int(decoding_raw.get("top_k", 50)),
            do_sample=bool(decoding_raw.get("do_sample", False)),
            max_new_tokens=int(decoding_raw.get("max_new_tokens", 1500)),
        )
    except ValueError as exc:
        raise ConfigError(f"decoding: {exc}") from exc

    parallelism = int(data.get("parallelism", 4))
    if parallelism < 1:
        raise ConfigError("parallelism: must be >= 1")

    similarity_mode = str(data.get("similarity_mode", "embedding"))
    if similarity_mode not in ("embedding", "unigram"):
        raise ConfigError("similarity_mode: must be 'embedding' or 'unigram'")

    model = ModelConfig(
        name=str(_require(model_raw, "name", "model")),
        path=str(model_raw.get("path", model_raw.get("name", ""))),
        family=str(_require(model_raw, "family", "model")),
        params=dict(model_raw.get("params", {})),
    )
    if model.params.get("script"):
        script = Path(str(model.params["script"]))
        model.params["script"] = str(script if script.is_absolute() else base / script)

    templates_dir = data.get("templates_dir")
    output_dir = base / str(data.get("output_dir", f"runs/{data.get('test_name', 'run')}"))

    return RunConfig(
        test_name=str(data.get("test_name", "run")),
        seed=int(data.get("seed", 42)),
        dataset_name=str(dataset.get("name", "")),
        count=count,
        use_scene_graph=use_scene_graph,
        images_dir=images_dir,
        scene_graph=scene_graph_path,
        model=model,
        prompt=prompt,
        num_per_inference=num_per_inference,
        use_img_ext=use_img_ext,
        q_prefix=q_prefix,
        q_prefix_prop=q_prefix_prop,
        decoding=decoding,
        parallelism=parallelism,
        output_dir=output_dir,
        templates_dir=base / str(templates_dir) if templates_dir else None,
        similarity_mode=similarity_mode,
        min_area_fraction=float(dataset.get("min_area_fraction", DEFAULT_MIN_AREA_FRACTION)),
        raw=data,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    data = yaml.safe_load(path.read_text(encoding="utf-8"))
    return parse_config(data, base_dir=path.parent)


def build_gateway(config: RunConfig) -> Gateway:
    params = config.model.params
    if config.model.family == "mock":
        script = None
        script_path = params.get("script")
        if script_path:
            if not Path(script_path).is_file():
                raise ConfigError(f"model.params.script: file not found: {script_path}")
            script = json.loads(Path(script_path).read_text(encoding="utf-8"))
        return MockGateway(
            seed=config.seed,
            script=script,
            model=config.model.name,
            parallelism=config.parallelism,
        )
    base_url = params.get("base_url") or os.environ.get(ENV_BACKEND_URL)
    if not base_url:
        raise ConfigError(
            f"model.params.base_url: required for family {config.model.family!r} "
            f"(or set {ENV_BACKEND_URL})"
        )
    token_env = params.get("auth_token_env", ENV_AUTH_TOKEN)
    return RemoteGateway(
        base_url=base_url,
        model=config.model.path or config.model.name,
        auth_token=os.environ.get(token_env),
        parallelism=config.parallelism,
    )


# ---------------------------------------------------------------------------
# dataset persistence


def write_dataset(records: list[SlotRecord], path: str | Path) -> Path:
    """One record per line, UTF-8 JSONL, stable field order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False))
            fh.write("\n")
    return path


def read_dataset(path: str | Path) -> list[SlotRecord]:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"dataset file not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(SlotRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise DatasetError(f"{path}: malformed record on line {lineno}: {exc}") from exc
    return records


# ---------------------------------------------------------------------------
# run orchestration


@dataclass
class RunManifest:
    config: dict[str, Any]
    config_sha256: str
    started_at: str
    finished_at: str
    plan_size: int
    totals: dict[str, int]
    wall_seconds: float
    tbar: Optional[float]
    ledger: list[dict[str, Any]]

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "config_sha256": self.config_sha256,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "plan_size": self.plan_size,
            "totals": self.totals,
            "wall_seconds": self.wall_seconds,
            "tbar": self.tbar,
            "ledger": self.ledger,
        }


@dataclass
class RunResult:
    records: list[SlotRecord]
    manifest: RunManifest
    dataset_path: Path
    invalid_path: Path
    manifest_path: Path


def _build_pipeline(config: RunConfig, gateway: Gateway, schedule, corpus_by_id):
    rules = ValidityRules(vip=config.pipeline == PIPELINE_SINGLE_STEP_VIP)
    # Mock runs use a frozen clock so output files replay byte-identically.
    clock: Callable[[], float] = (lambda: 0.0) if config.model.family == "mock" else time.monotonic
    common = dict(
        gateway=gateway,
        schedule=schedule,
        corpus_by_id=corpus_by_id,
        params=config.decoding,
        rules=rules,
        run_seed=config.seed,
        attach_images=config.use_img_ext,
        clock=clock,
    )
    tdir = config.templates_dir
    if config.pipeline == PIPELINE_SINGLE_STEP:
        return SingleStepPipeline(template=load_template("single_step", tdir), **common)
    if config.pipeline == PIPELINE_SINGLE_STEP_VIP:
        return SingleStepVipPipeline(
            template=load_template("single_step_vip", tdir),
            min_area_fraction=config.min_area_fraction,
            **common,
        )
    templates = {
        "question": load_template("multi_step_question", tdir),
        "answer": load_template("multi_step_answer", tdir),
    }
    for source in EXPLANATION_SOURCES:
        templates[source] = load_template(f"explanation_{source}", tdir)
    sim = (
        unigram_similarity
        if config.similarity_mode == "unigram"
        else embedding_similarity(gateway.embed)
    )
    return MultiStepPipeline(templates=templates, sim=sim, **common)


def _load_progress(path: Path, config_sha: str) -> dict[int, SlotRecord]:
    done: dict[int, SlotRecord] = {}
    if not path.is_file():
        return done
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        try:
            if json.loads(header).get("config_sha256") != config_sha:
                raise ConfigError("progress file belongs to a different config; not resuming")
        except json.JSONDecodeError:
            return {}
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                record = SlotRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError):
                break  # torn tail from an interrupted run
            done[record.index] = record
    return done


def run_from_config(
    config: RunConfig | str | Path,
    resume: bool = False,
    output_dir: Optional[Path] = None,
) -> RunResult:
    """Execute the configured pipeline end-to-end and persist its outputs.

    Writes dataset.jsonl (valid slots), invalid.jsonl (invalid + skipped),
    progress.jsonl (crash-safe per-slot log enabling --resume), and
    manifest.json.  With a mock backend the dataset bytes are a pure function
    of the config.
    """
    if not isinstance(config, RunConfig):
        config = load_config(config)
    out = Path(output_dir) if output_dir else config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    config_sha = config.sha256()

    records_list, corpus_errors = load_corpus(config.images_dir, config.scene_graph)
    for err in corpus_errors:
        log.warning("corpus: %s", err)
    corpus_by_id = {r.id: r for r in records_list}
    plan = build_sampling_plan(
        records_list,
        config.count,
        config.num_per_inference,
        config.seed,
        require_scene_graph=config.use_scene_graph,
        min_area_fraction=config.min_area_fraction,
    )
    schedule = build_prefix_schedule(
        config.q_prefix, config.q_prefix_prop, len(plan), config.seed
    )
    gateway = build_gateway(config)
    pipeline = _build_pipeline(config, gateway, schedule, corpus_by_id)

    progress_path = out / "progress.jsonl"
    done = _load_progress(progress_path, config_sha) if resume else {}
    pending = [e for e in plan.entries if e.index not in done]

    started_at = datetime.now(timezone.utc).isoformat()
    t0 = time.monotonic()

    mode = "a" if (resume and done) else "w"
    with progress_path.open(mode, encoding="utf-8") as progress:
        if mode == "w":
            progress.write(json.dumps({"config_sha256": config_sha}) + "\n")
        if pending:
            with concurrent.futures.ThreadPoolExecutor(
                max_workers=config.parallelism
            ) as pool:
                for record in pool.map(pipeline.run_entry, pending):
                    done[record.index] = record
                    progress.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
                    progress.flush()

    records = [done[i] for i in sorted(done)]
    if len(records) != len(plan):
        raise DatasetError(
            f"outcome ledger has {len(records)} records for a plan of {len(plan)}"
        )

    dataset_path = write_dataset([r for r in records if r.status == STATUS_VALID], out / "dataset.jsonl")
    invalid_path = write_dataset([r for r in records if r.status != STATUS_VALID], out / "invalid.jsonl")

    wall = time.monotonic() - t0
    totals = {
        STATUS_VALID: sum(r.status == STATUS_VALID for r in records),
        STATUS_INVALID: sum(r.status == STATUS_INVALID for r in records),
        STATUS_SKIPPED: sum(r.status == STATUS_SKIPPED for r in records),
    }
    manifest = RunManifest(
        config=config.raw,
        config_sha256=config_sha,
        started_at=started_at,
        finished_at=datetime.now(timezone.utc).isoformat(),
        plan_size=len(plan),
        totals=totals,
        wall_seconds=wall,
        tbar=wall / totals[STATUS_VALID] if totals[STATUS_VALID] else None,
        ledger=[
            {
                "index": r.index,
                "id": r.id,
                "status": r.status,
                "reason": r.reason,
                "stage": r.stage,
                "duration_s": r.meta.duration_s if r.meta else 0.0,
            }
            for r in records
        ],
    )
    manifest_path = out / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest.to_dict(), ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    return RunResult(
        records=records,
        manifest=manifest,
        dataset_path=dataset_path,
        invalid_path=invalid_path,
        manifest_path=manifest_path,
    )
