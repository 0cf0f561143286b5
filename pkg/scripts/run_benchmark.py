#!/usr/bin/env python3
"""Run the pinned end-to-end benchmark and the stage-removal ablations.

Simulates the default world (50 services, 40 storms, 20% rare-type storms,
3 heartbeat types, seed 7), trains, calibrates, then aggregates and
evaluates the full pipeline plus each ablation. Results land in the output
directory; the summary table prints at the end.

Usage: python3 scripts/run_benchmark.py [--out bench_out] [--seed 7]
"""

import argparse
import json
import subprocess
import sys
from pathlib import Path


def sh(*args: str) -> None:
    command = [sys.executable, "-m", "stormsift", *args]
    print("+", " ".join(command[2:]))
    subprocess.run(command, check=True)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="bench_out")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--config", default=None, help="optional run-config JSON")
    args = parser.parse_args()

    out = Path(args.out)
    data, art, runs = out / "data", out / "artifacts", out / "runs"
    config = ["--config", args.config] if args.config else []

    sh("simulate", "--out", str(data), "--seed", str(args.seed), *config)
    sh("train", "--data", str(data), "--artifacts", str(art), *config)
    sh("calibrate", "--data", str(data), "--artifacts", str(art), *config)
    sh("ablate", "--data", str(data), "--artifacts", str(art), "--out", str(runs), *config)

    summary = json.loads((runs / "summary.json").read_text())
    print(f"\n{'variant':<14} {'precision':>9} {'recall':>9} {'f1':>9} {'llm share':>10}")
    for name, row in summary.items():
        share = row["llm_queried_pairs"] / max(row["scored_pairs"], 1)
        print(
            f"{name:<14} {row['precision']:>9.3f} {row['recall']:>9.3f} "
            f"{row['f1']:>9.3f} {share:>9.1%}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
