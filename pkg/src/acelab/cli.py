"""Command line entry point: ``run``, ``aggregate``, ``plot`` and ``verify``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .agent import VARIANTS
from .errors import AceError
from .harness import (RunConfig, RunFailed, aggregate, emit_plots, read_csv, run_experiment, split_by_seed,
                      summary_header, write_csv)


def _seed_list(text: str):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acelab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train every seed of a JSON run config")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--seed-override", type=_seed_list, help="comma-separated seeds replacing the config's")
    run.add_argument("--variant", choices=sorted(VARIANTS))

    agg = sub.add_parser("aggregate", help="mean/std/min/max across seeds")
    agg.add_argument("--in", dest="src", required=True, type=Path, help="run directory or metrics CSV")
    agg.add_argument("--out", required=True, type=Path)

    plot = sub.add_parser("plot", help="SVG learning curves and causal-weight traces")
    plot.add_argument("--summary", required=True, type=Path)
    plot.add_argument("--weights", type=Path, help="weight-trace CSV (default: weights.csv next to the summary)")
    plot.add_argument("--out", required=True, type=Path)

    sub.add_parser("verify", help="run the tabular, causal, gradient, dormancy and reduction suites")
    return parser


def _metrics_path(src: Path) -> Path:
    return src / "metrics.csv" if src.is_dir() else src


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = RunConfig.from_json(args.config).to_dict()
            if args.seed_override:
                cfg["seeds"] = args.seed_override
            if args.variant:
                cfg["variant"] = args.variant
            art = run_experiment(RunConfig.from_dict(cfg))
            print(f"wrote {art.run_dir}")
            for seed, step in art.first_success.items():
                print(f"seed {seed}: first success at step {step}")
        elif args.command == "aggregate":
            rows = aggregate(split_by_seed(read_csv(_metrics_path(args.src))))
            write_csv(args.out, summary_header(), rows)
            print(f"wrote {args.out} ({len(rows)} steps)")
        elif args.command == "plot":
            weights_path = args.weights or args.summary.parent / "weights.csv"
            trace = read_csv(weights_path) if weights_path.exists() else None
            for path in emit_plots(read_csv(args.summary), args.out, trace):
                print(f"wrote {path}")
        elif args.command == "verify":
            from .verify import run_all

            results = run_all()
            return 0 if all(r.passed for r in results) else 1
    except RunFailed as exc:
        print(f"run failed: {exc}; crash report at {exc.artifacts.crash_report}", file=sys.stderr)
        return 2
    except (AceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
