"""``kercon`` command line: run, ablate, compare, gen-data.

Failures exit with status 1 and print a JSON object
``{"error": <type>, "message": <text>}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiment


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kercon", description="Kernel-weighted contrastive regression experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, jobs=False):
        sp.add_argument("--seed", type=int, default=None, help="override data and training seed")
        sp.add_argument("--epochs", type=int, default=None, help="override training epochs")
        sp.add_argument("--out-dir", default="results")
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    sp = sub.add_parser("run", help="train and evaluate one config")
    sp.add_argument("config")
    common(sp)

    sp = sub.add_parser("ablate", help="kernel x loss x seed grid")
    sp.add_argument("grid")
    common(sp, jobs=True)

    sp = sub.add_parser("compare", help="baseline vs contrastive configs on shared data")
    sp.add_argument("configs", nargs="+")
    sp.add_argument("--seeds", type=int, nargs="+", default=None, help="replicate seeds (default: config seed)")
    common(sp, jobs=True)

    sp = sub.add_parser("gen-data", help="write a synthetic dataset CSV and manifest")
    sp.add_argument("config")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out-dir", default="data")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            rec = experiment.run_single(args.config, args.out_dir, seed=args.seed, epochs=args.epochs)
            print(json.dumps({"run_dir": rec.run_dir, "reused": rec.reused, **rec.result.to_dict()}, indent=2))
        elif args.command == "ablate":
            if args.seed is not None:
                raise ValueError("ablate takes its seeds from the grid file")
            out = experiment.run_ablation(args.grid, args.out_dir, epochs=args.epochs, jobs=args.jobs)
            with open(f"{args.out_dir}/ablation_table.txt") as fh:
                print(fh.read(), end="")
            if out["errors"]:
                print(f"{len(out['errors'])} cell(s) failed; see ablation_errors.json", file=sys.stderr)
                return 1
        elif args.command == "compare":
            seeds = args.seeds if args.seeds is not None else ([args.seed] if args.seed is not None else None)
            out = experiment.run_comparison(args.configs, args.out_dir, seeds=seeds, epochs=args.epochs, jobs=args.jobs)
            for row in out["table"]:
                print(",".join(str(row[k]) for k in experiment.COMPARISON_FIELDS))
            print(json.dumps(out["verdicts"], indent=2))
        elif args.command == "gen-data":
            print(experiment.gen_data(args.config, args.out_dir, seed=args.seed))
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
