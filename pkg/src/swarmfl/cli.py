"""Command line: ``swarmfl run | suite | audit``."""

from __future__ import annotations

import argparse
import json
import sys

from . import harness


def _seeds(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty seed list")
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="swarmfl", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="simulate one configuration")
    p.add_argument("--config", help="INI file; defaults apply to anything missing")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--log-deliveries", action="store_true", help="also write deliveries.jsonl")

    p = sub.add_parser("suite", help="run a batch experiment")
    p.add_argument("--name", required=True, choices=harness.SUITES)
    p.add_argument("--seeds", type=_seeds,
                   help="e.g. 0-4 or 1,5,9; default 0..n-1 for the original count n (5, 20, 20, 18)")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="base INI file for every configuration")
    p.add_argument("--cache", help="directory for memoised run metrics")

    p = sub.add_parser("audit", help="replay a run directory and check invariants")
    p.add_argument("--run", required=True)

    p = sub.add_parser("config", help="print the default config file")

    args = ap.parse_args(argv)
    if args.cmd == "config":
        sys.stdout.write(harness.config_to_ini(harness.ExperimentConfig()))
        return 0
    if args.cmd == "run":
        cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
        result = harness.run(cfg, args.seed, log_deliveries=args.log_deliveries)
        out = harness.write_run(result, args.out)
        last = result.rows[-1]
        print(f"{out}: {last.aggregations} aggregations, round {last.round}, "
              f"final loss {harness.final_loss(result.rows):.6g}, head {result.head[:16]}")
        return 0
    if args.cmd == "suite":
        base = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
        seeds = args.seeds or list(range(harness.DEFAULT_REPETITIONS[args.name]))
        out = harness.experiment_suite(
            args.name, seeds, args.out, base, cache_dir=args.cache,
            progress=lambda name, s: print(f"done {name} seed {s}", flush=True),
        )
        print(f"summary: {out / 'summary.csv'}")
        return 0
    report = harness.audit_run(args.run)
    print(json.dumps(report, indent=2))
    return 0 if report["ok"] else 1


if __name__ == "__main__":
    sys.exit(main())
