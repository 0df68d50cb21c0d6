"""Command-line entry point: ``rehearsal {order-bench,auf-bench,sachs}``."""
from __future__ import annotations

import argparse
import logging
import sys

from .bench import (ConfigError, RunManifest, auf_settings, emit_results, load_config, order_cells,
                    run_auf_bench, run_order_bench, run_sachs_bench, ingest_sachs)

log = logging.getLogger("rehearsal")

SACHS_KEYS = {"runs", "log_transform", "standardize", "cutoff", "data", "truth"}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--out", required=True, help="result file to write")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--timestamps", action="store_true",
                   help="record wall-clock start/end in the manifest (breaks byte-identical reruns)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rehearsal", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("order-bench", help="synthetic order-learning benchmark"))
    _common(sub.add_parser("auf-bench", help="synthetic AUF decision benchmark"))
    sp = sub.add_parser("sachs", help="order learning on the Sachs protein data")
    _common(sp)
    sp.add_argument("--runs", type=int)
    sp.add_argument("--data", help="CSV with 11 numeric columns (default: bundled copy)")
    sp.add_argument("--truth", help="reference edge list with a cause,effect header")
    sp.add_argument("--log-transform", action=argparse.BooleanOptionalAction, default=None)
    sp.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=None)
    return parser


def _order_bench(args, blob):
    cells = order_cells(blob)
    table, seeds, _ = run_order_bench(cells, args.seed, args.jobs)
    return table, {"cells": [c.to_dict() for c in cells]}, seeds, {}


def _auf_bench(args, blob):
    settings, train, opt = auf_settings(blob)
    table, seeds, _ = run_auf_bench(settings, args.seed, args.jobs, train, opt)
    cfg = {"settings": [s.to_dict() for s in settings], "train": train.to_dict(), "opt": opt.to_dict()}
    return table, cfg, seeds, {}


def _sachs(args, blob):
    unknown = sorted(set(blob) - SACHS_KEYS)
    if unknown:
        raise ConfigError(f"sachs config: unknown key(s) {', '.join(unknown)}")
    opts = {"runs": 10, "log_transform": True, "standardize": True, "cutoff": 1e-3,
            "data": None, "truth": None, **blob}
    for key in ("runs", "log_transform", "standardize", "data", "truth"):
        val = getattr(args, key)
        if val is not None:
            opts[key] = val
    data = ingest_sachs(opts["data"], opts["truth"])
    table, seeds, _ = run_sachs_bench(opts["runs"], args.seed, opts["log_transform"], opts["standardize"],
                                      cutoff=opts["cutoff"], data=data)
    extras = {"columns": data.column_index, "preprocessing": {"log_transform": opts["log_transform"],
                                                              "standardize": opts["standardize"]}}
    cfg = {k: opts[k] for k in ("runs", "log_transform", "standardize", "cutoff")}
    return table, cfg, seeds, extras


COMMANDS = {"order-bench": _order_bench, "auf-bench": _auf_bench, "sachs": _sachs}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        blob = load_config(args.config) if args.config else {}
        manifest = RunManifest(args.command, args.seed, {})
        if args.timestamps:
            manifest.stamp("start")
        table, cfg, seeds, extras = COMMANDS[args.command](args, blob)
        manifest.config, manifest.task_seeds, manifest.extras = cfg, seeds, extras
        if args.timestamps:
            manifest.stamp("end")
        emit_results(table, args.out, args.format, manifest)
        log.info("wrote %d rows to %s", len(table), args.out)
    except Exception as exc:  # report anything as a diagnostic and a nonzero exit
        print(f"rehearsal {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
