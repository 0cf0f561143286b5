"""Command-line front end: simulate, train, calibrate, aggregate, evaluate, ablate.

A typical run:

    stormsift simulate --out data
    stormsift train --data data --artifacts art
    stormsift calibrate --data data --artifacts art
    stormsift aggregate --data data --artifacts art --out run
    stormsift evaluate --data data --artifacts art --run run

All knobs live in one JSON config file (``--config``); the flags below
override their corresponding config values. Every artifact carries the
effective config's fingerprint.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

from .ingest import load_dataset, write_alerts_jsonl, write_labels_jsonl, write_sop_file
from .model import ValidationError
from .pipeline import (
    AggregateFlags,
    ArtifactPaths,
    MissingArtifactError,
    RunConfig,
    aggregate_pipeline,
    calibrate_pipeline,
    evaluate_pipeline,
    load_config,
    save_aggregate,
    save_artifacts,
    train_pipeline,
)
from .simulate import SimConfig, simulate_dataset

log = logging.getLogger(__name__)


def _apply_sim_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    sim = cfg.sim
    overrides = {}
    for name in ("seed", "services", "storms", "regions", "noise_types"):
        value = getattr(args, name, None)
        if value is not None:
            overrides["rng_seed" if name == "seed" else name] = value
    if getattr(args, "rare_fraction", None) is not None:
        overrides["rare_storm_fraction"] = args.rare_fraction
    if overrides:
        sim = SimConfig.from_dict({**sim.to_dict(), **overrides})
        cfg = dataclasses.replace(cfg, sim=sim)
    return cfg


def _load_data(args: argparse.Namespace):
    data = Path(args.data)
    labels = data / "labels.jsonl"
    return load_dataset(
        data / "alerts.jsonl",
        data / "sops",
        labels if labels.is_file() else None,
    )


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _apply_sim_overrides(load_config(args.config), args)
    out = Path(args.out)
    (out / "sops").mkdir(parents=True, exist_ok=True)
    dataset = simulate_dataset(cfg.sim)
    write_alerts_jsonl(out / "alerts.jsonl", dataset.alerts)
    write_labels_jsonl(out / "labels.jsonl", dataset.labels or [])
    for sop_id in sorted(dataset.sops):
        write_sop_file(out / "sops", dataset.sops[sop_id])
    (out / "sim_config.json").write_text(
        json.dumps(
            {"config_fingerprint": cfg.fingerprint(), "sim": cfg.sim.to_dict()},
            sort_keys=True,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    print(
        f"simulated {len(dataset.alerts)} alerts, {len(dataset.sops)} SOPs, "
        f"{len(dataset.labels or [])} truth groups -> {out}"
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.cutoff_fraction is not None:
        cfg = dataclasses.replace(
            cfg, split=dataclasses.replace(cfg.split, cutoff_fraction=args.cutoff_fraction)
        )
    if args.cutoff is not None:
        cfg = dataclasses.replace(cfg, split=dataclasses.replace(cfg.split, cutoff=args.cutoff))
    if args.count_empty_windows:
        cfg = dataclasses.replace(
            cfg, temporal=dataclasses.replace(cfg.temporal, count_empty_windows=True)
        )
    dataset = _load_data(args)
    t0 = time.perf_counter()
    state = train_pipeline(dataset, cfg)
    save_artifacts(state, ArtifactPaths(Path(args.artifacts)))
    print(
        f"trained on {sum(1 for a in dataset.alerts if a.arrival_time < state.cutoff)} "
        f"alerts (cutoff {state.cutoff}) in {time.perf_counter() - t0:.1f}s -> {args.artifacts}"
    )
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    dataset = _load_data(args)
    result = calibrate_pipeline(dataset, cfg, ArtifactPaths(Path(args.artifacts)))
    print(
        f"calibrated alpha={result['alpha']} over {result['labeled_pairs']} labeled pairs "
        f"({result['positive_pairs']} positive)"
    )
    return 0


def _flags_from(args: argparse.Namespace) -> AggregateFlags:
    return AggregateFlags(
        no_temporal=args.no_temporal, no_spatial=args.no_spatial, no_llm=args.no_llm
    )


def _with_llm_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    llm = cfg.llm
    updates = {}
    if getattr(args, "llm_parallelism", None) is not None:
        updates["parallelism"] = args.llm_parallelism
    if getattr(args, "backend", None) is not None:
        updates["backend"] = args.backend
    if getattr(args, "endpoint", None) is not None:
        updates["endpoint"] = args.endpoint
    if getattr(args, "model", None) is not None:
        updates["model"] = args.model
    if updates:
        cfg = dataclasses.replace(cfg, llm=dataclasses.replace(llm, **updates))
    return cfg


def cmd_aggregate(args: argparse.Namespace) -> int:
    cfg = _with_llm_overrides(load_config(args.config), args)
    dataset = _load_data(args)
    result = aggregate_pipeline(
        dataset, cfg, ArtifactPaths(Path(args.artifacts)), _flags_from(args)
    )
    save_aggregate(result, Path(args.out), cfg, dataset)
    c = result.counters
    print(
        f"[{result.flags.tag()}] scored {c['scored_pairs']} pairs: "
        f"{c['noise_pairs']} noise, {c['statistical_correlated_pairs']} statistical, "
        f"{c['llm_queried_pairs']} llm-queried -> {c['clusters']} clusters"
    )
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    dataset = _load_data(args)
    mode = "global" if args.global_universe else None
    metrics = evaluate_pipeline(
        dataset, cfg, ArtifactPaths(Path(args.artifacts)), Path(args.run), mode
    )
    print(json.dumps(metrics, sort_keys=True, indent=2))
    return 0


ABLATION_VARIANTS = (
    ("full", AggregateFlags()),
    ("no-temporal", AggregateFlags(no_temporal=True)),
    ("no-spatial", AggregateFlags(no_spatial=True)),
    ("no-llm", AggregateFlags(no_llm=True)),
)


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _with_llm_overrides(load_config(args.config), args)
    dataset = _load_data(args)
    paths = ArtifactPaths(Path(args.artifacts))
    out = Path(args.out)
    requested = {
        name
        for name, flag in (
            ("no-temporal", args.no_temporal),
            ("no-spatial", args.no_spatial),
            ("no-llm", args.no_llm),
        )
        if flag
    }
    summary = {}
    for name, flags in ABLATION_VARIANTS:
        if requested and name != "full" and name not in requested:
            continue
        run_dir = out / name
        result = aggregate_pipeline(dataset, cfg, paths, flags)
        save_aggregate(result, run_dir, cfg, dataset)
        metrics = evaluate_pipeline(dataset, cfg, paths, run_dir)
        summary[name] = {
            "precision": metrics["precision"],
            "recall": metrics["recall"],
            "f1": metrics["f1"],
            "llm_queried_pairs": metrics["counters"]["llm_queried_pairs"],
            "scored_pairs": metrics["counters"]["scored_pairs"],
        }
        print(f"{name}: f1={metrics['f1']} precision={metrics['precision']} recall={metrics['recall']}")
    (out / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stormsift",
        description="Hybrid alert aggregation: correlation mining plus LLM reasoning over SOPs.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset with ground truth")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--services", type=int, default=None)
    p.add_argument("--storms", type=int, default=None)
    p.add_argument("--regions", type=int, default=None)
    p.add_argument("--noise-types", dest="noise_types", type=int, default=None)
    p.add_argument("--rare-fraction", dest="rare_fraction", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="build statistics, embeddings, summaries and samples")
    p.add_argument("--data", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--cutoff-fraction", dest="cutoff_fraction", type=float, default=None)
    p.add_argument("--cutoff", type=int, default=None)
    p.add_argument(
        "--count-empty-windows",
        dest="count_empty_windows",
        action="store_true",
        help="count empty window slots in the probability denominator",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="grid-search alpha on labeled training pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("aggregate", help="score test pairs, reason, and emit clusters")
    p.add_argument("--data", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--no-temporal", action="store_true")
    p.add_argument("--no-spatial", action="store_true")
    p.add_argument("--no-llm", action="store_true")
    p.add_argument("--llm-parallelism", dest="llm_parallelism", type=int, default=None)
    p.add_argument("--backend", choices=("mock", "remote"), default=None)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--model", default=None)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("evaluate", help="compare a cluster report against truth groups")
    p.add_argument("--data", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--run", required=True, help="directory produced by aggregate")
    p.add_argument("--config", default=None)
    p.add_argument("--global-universe", dest="global_universe", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run stage-removal variants and compare F1")
    p.add_argument("--data", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--no-temporal", action="store_true", help="only run this ablation")
    p.add_argument("--no-spatial", action="store_true", help="only run this ablation")
    p.add_argument("--no-llm", action="store_true", help="only run this ablation")
    p.add_argument("--llm-parallelism", dest="llm_parallelism", type=int, default=None)
    p.add_argument("--backend", choices=("mock", "remote"), default=None)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--model", default=None)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValidationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
