"""Command-line entry points: run, compare, validate-config, convert-trace."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness, mobility

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vanetsim",
        description="Discrete-time VANET topology regulation simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one algorithm over the configured scenario")
    run.add_argument("--config", required=True, help="experiment config file")
    run.add_argument("--algorithm", choices=harness.ALGORITHMS, help="override [run] algorithm")
    run.add_argument("--seed", type=int, help="override [run] seed")
    run.add_argument("--out", default="out", help="output directory (default: out)")

    cmp_ = sub.add_parser("compare", help="run all four algorithms on one scenario")
    cmp_.add_argument("--config", required=True)
    cmp_.add_argument("--out", required=True, help="output directory")
    cmp_.add_argument("--seed", type=int, help="override [run] seed")

    val = sub.add_parser("validate-config", help="parse and validate a config file")
    val.add_argument("path", help="config file to check")

    conv = sub.add_parser("convert-trace", help="convert an FCD XML trace to trace CSV")
    conv.add_argument("--in", dest="infile", required=True, help="FCD XML input")
    conv.add_argument("--out", dest="outfile", required=True, help="CSV output")
    conv.add_argument("--geo", action="store_true",
                      help="treat x/y as lon/lat and project to meters")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "validate-config":
            harness.load_config(args.path)
            print(f"ok: {args.path}")
            return EXIT_OK
        if args.command == "convert-trace":
            with open(args.infile, "rb") as fh:
                snaps = mobility.parse_fcd_xml(fh, geo=args.geo)
            with open(args.outfile, "w", encoding="utf-8", newline="\n") as fh:
                mobility.write_csv_trace(snaps, fh)
            print(f"wrote {len(snaps)} snapshots to {args.outfile}")
            return EXIT_OK
        cfg = harness.load_config(args.config)
        if getattr(args, "seed", None) is not None:
            cfg.seed = args.seed
        if args.command == "run":
            if args.algorithm:
                cfg.algorithm = args.algorithm
            result = harness.run_experiment(cfg, out_dir=args.out)
            s = result.summary
            print(f"{result.algorithm}: {len(result.records)} steps -> {result.csv_path}")
            if s.n_records:
                print(
                    f"post-warmup medians: L_avg={s.per_metric['l_avg'].median:.3f} hops, "
                    f"delay={s.per_metric['mean_delay_s'].median * 1e3:.3f} ms, "
                    f"throughput mean={s.per_metric['throughput_mbps'].mean:.1f} Mbps"
                )
            return EXIT_OK
        if args.command == "compare":
            results = harness.compare(cfg, args.out)
            print(f"wrote per-step CSVs and comparison.txt to {args.out}")
            for algorithm in harness.ALGORITHMS:
                s = results[algorithm].summary
                if s.n_records:
                    print(
                        f"  {algorithm:14s} L_avg median {s.per_metric['l_avg'].median:6.2f}  "
                        f"delay median {s.per_metric['mean_delay_s'].median * 1e3:7.3f} ms  "
                        f"throughput mean {s.per_metric['throughput_mbps'].mean:8.1f} Mbps"
                    )
            return EXIT_OK
        parser.error(f"unknown command {args.command!r}")
        return EXIT_CONFIG
    except (harness.ConfigError, mobility.ConfigError, mobility.TraceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failure: one-line cause, nonzero exit
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
