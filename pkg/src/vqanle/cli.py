"""Command-line entry points: generate, evaluate, stats, review, export-scores."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from .corpus import CorpusError
from .metrics import (
    MetricError,
    corpus_stats,
    efficiency_report,
    gwet_ac2,
    rouge_1,
    rouge_l,
    similarity_report,
)
from .prompts import PromptError
from .records import STATUS_VALID, SlotRecord, Triplet, TripletMeta
from .runner import ConfigError, DatasetError, read_dataset, run_from_config



def _valid_triplets(records: list[SlotRecord]) -> list[Triplet]:
    return [r.to_triplet() for r in records if r.status == STATUS_VALID]


def _read_reference(path: Path) -> list[Triplet]:
    """Reference corpora may be full slot records or bare q/a/e objects."""
    triplets: list[Triplet] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SystemExit(f"{path}: malformed JSON on line {lineno}: {exc}")
            if "status" in d and d.get("status") != STATUS_VALID:
                continue
            try:
                triplets.append(
                    Triplet(
                        question=d["question"],
                        answer=d["answer"],
                        explanation=d["explanation"],
                        meta=TripletMeta(
                            image_id=d.get("image_id", ""), pipeline=d.get("meta", {}).get("pipeline", "reference")
                        ),
                    )
                )
            except KeyError as exc:
                raise SystemExit(f"{path}: line {lineno} lacks field {exc}")
    return triplets


def _print_stats_table(name: str, stats: Any) -> None:
    print(f"{'setting':<24}{'valid':>8}{'unique':>8}{'valid %':>9}{'unique %':>10}"
          f"{'V(q)':>7}{'V(a)':>7}{'V(e)':>7}{'L(q)':>7}{'L(a)':>7}{'L(e)':>7}")
    print(f"{name:<24}{stats.valid:>8}{stats.unique:>8}{stats.valid_pct:>9.1f}"
          f"{stats.unique_pct:>10.1f}"
          f"{stats.vocabulary['q']:>7}{stats.vocabulary['a']:>7}{stats.vocabulary['e']:>7}"
          f"{stats.avg_length['q']:>7.1f}{stats.avg_length['a']:>7.1f}{stats.avg_length['e']:>7.1f}")


def cmd_generate(args: argparse.Namespace) -> int:
    result = run_from_config(
        args.config,
        resume=args.resume,
        output_dir=Path(args.output_dir) if args.output_dir else None,
    )
    totals = result.manifest.totals
    print(f"plan: {result.manifest.plan_size} slots  "
          f"valid: {totals['valid']}  invalid: {totals['invalid']}  skipped: {totals['skipped']}")
    print(f"dataset:  {result.dataset_path}")
    print(f"invalid:  {result.invalid_path}")
    print(f"manifest: {result.manifest_path}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    records = read_dataset(Path(args.dataset))
    triplets = _valid_triplets(records)
    expected = args.expected if args.expected is not None else len(records)
    stats = corpus_stats(triplets, expected=max(expected, len(triplets)))
    _print_stats_table(Path(args.dataset).stem, stats)
    if args.out:
        Path(args.out).write_text(json.dumps(stats.to_dict(), indent=2) + "\n", encoding="utf-8")
        print(f"report: {args.out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    records = read_dataset(Path(args.dataset))
    triplets = _valid_triplets(records)
    if not triplets:
        raise SystemExit("dataset has no valid triplets to evaluate")
    reference = _read_reference(Path(args.reference))

    expected = args.expected
    manifest: Optional[dict] = None
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        if expected is None:
            expected = manifest.get("plan_size")
    if expected is None:
        expected = len(records)

    stats = corpus_stats(triplets, expected=max(expected, len(triplets)))
    report: dict[str, Any] = {
        "dataset": str(args.dataset),
        "reference": str(args.reference),
        "stats": stats.to_dict(),
        "similarity": similarity_report(triplets, reference).to_dict(),
    }

    rouge_scores = [rouge_l(t.explanation, f"{t.question} {t.answer}") for t in triplets]
    rouge1_scores = [rouge_1(t.explanation, f"{t.question} {t.answer}") for t in triplets]
    report["rouge"] = {
        "rouge_l_f1": sum(s.f1 for s in rouge_scores) / len(rouge_scores),
        "rouge_1_f1": sum(s.f1 for s in rouge1_scores) / len(rouge1_scores),
    }

    if manifest is not None and manifest.get("totals", {}).get("valid"):
        eff = efficiency_report(
            manifest["wall_seconds"], manifest["totals"]["valid"], args.baseline_tbar
        )
        report["efficiency"] = {
            "total_seconds": eff.total_seconds,
            "valid": eff.valid,
            "tbar": eff.tbar,
            "tbar_display": eff.tbar_display,
            "speedup": eff.speedup,
        }

    if args.scores:
        from .review import ScoreStore, agreement_tables

        store = ScoreStore(Path(args.scores))
        agreement: dict[str, Optional[float]] = {}
        for criterion, table in agreement_tables(store.resolved()).items():
            try:
                agreement[criterion] = gwet_ac2(table)
            except MetricError:
                agreement[criterion] = None
        report["agreement"] = agreement

    # Heavyweight encoder scores (BERTScore/CLIPScore) are computed elsewhere;
    # a precomputed-scores file is merged into the report verbatim.
    if args.external_scores:
        report["external_scores"] = json.loads(
            Path(args.external_scores).read_text(encoding="utf-8")
        )

    sim = report["similarity"]
    _print_stats_table(Path(args.dataset).stem, stats)
    print()
    print(f"{'':<10}{'q':>8}{'a':>8}{'e':>8}{'avg':>8}")
    print(f"{'Pearson':<10}" + "".join(f"{sim['pearson'][c]:>8.2f}" for c in ("q", "a", "e", "avg")))
    print(f"{'JSD':<10}" + "".join(f"{sim['jsd'][c]:>8.2f}" for c in ("q", "a", "e", "avg")))
    print()
    print(f"ROUGE-L f1 (q,a <-> e): {report['rouge']['rouge_l_f1']:.3f}   "
          f"ROUGE-1 f1: {report['rouge']['rouge_1_f1']:.3f}")
    if "efficiency" in report:
        eff = report["efficiency"]
        extra = f"  ({eff['speedup']:.1f}x)" if eff.get("speedup") else ""
        print(f"t = {eff['total_seconds']:.1f}s over {eff['valid']} valid -> "
              f"tbar = {eff['tbar_display']:.2f}s{extra}")

    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        print(f"\nreport: {args.out}")
    return 0


def cmd_review(args: argparse.Namespace) -> int:
    import uvicorn

    from .review import create_review_app

    host, _, port = args.bind.rpartition(":")
    app = create_review_app(
        dataset_path=Path(args.dataset),
        images_dir=Path(args.images),
        scores_path=Path(args.scores),
    )
    if args.ui:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=args.ui, html=True), name="ui")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")
    return 0


def cmd_export_scores(args: argparse.Namespace) -> int:
    from .review import ScoreStore, export_csv

    store = ScoreStore(Path(args.scores))
    csv_text = export_csv(store.resolved())
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(csv_text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vqanle")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="run a generation pipeline from a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("stats", help="corpus statistics for a dataset file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--expected", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("evaluate", help="compare a dataset against a reference corpus")
    p.add_argument("--dataset", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--expected", type=int, default=None)
    p.add_argument("--baseline-tbar", type=float, default=None)
    p.add_argument("--scores", default=None)
    p.add_argument("--external-scores", default=None,
                   help="JSON file of precomputed encoder scores to fold into the report")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("review", help="serve the human-review HTTP API")
    p.add_argument("--dataset", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--bind", default="127.0.0.1:8900")
    p.add_argument("--scores", default="scores.jsonl")
    p.add_argument("--ui", default=None, help="static directory to serve at /")
    p.set_defaults(func=cmd_review)

    p = sub.add_parser("export-scores", help="export collected scores as CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export_scores)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, CorpusError, MetricError, PromptError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
