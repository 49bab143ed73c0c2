"""Command-line entry point: ``scaledspin {run,analyze,plotdata,sequences,verify}``.

Exit codes: 0 ok, 1 runtime failure, 2 validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction

from . import __version__
from .protocols import AliasingError
from .sequences import (
    PHASES,
    SequenceError,
    SequenceRegistry,
    all_patterns_table,
    build_sequence,
    registry_record,
    search_phase_patterns,
    slot_delays,
)
from .spin_core import CapacityError, GeometryError

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scaledspin", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="execute a sweep described by a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="result directory (default: config output.dir or ./results)")
    r.add_argument("--force", action="store_true", help="recompute cached cells")
    r.add_argument("--workers", type=int, help="worker processes (default: $SCALEDSPIN_WORKERS or all cores)")
    r.add_argument("--seed", type=int, help="override system.seed")

    a = sub.add_parser("analyze", help="fit result curves")
    a.add_argument("results", nargs="+", help="result directories")
    a.add_argument("--model", action="append", dest="models", required=True,
                   help="abragam, flambaum_izrailev, boltzmann, gaussian_mqc or power_law (repeatable)")
    a.add_argument("--out", help="write fits here instead of next to the curves")

    d = sub.add_parser("plotdata", help="write figure-ready CSV tables")
    d.add_argument("results", nargs="+")
    d.add_argument("--out", required=True)
    d.add_argument("--svg", action="store_true", help="also render static SVG figures")

    s = sub.add_parser("sequences", help="list, search or publish pulse sequences")
    s.add_argument("action", choices=["list", "search", "show"])
    s.add_argument("--kind", default="P8", choices=["P8", "P16", "magic_echo", "free"])
    s.add_argument("--delta", default="0.3", help="scaling (decimal or fraction, e.g. 1/3)")
    s.add_argument("--tau", type=float, default=10e-6)
    s.add_argument("--direction", default="F", choices=["F", "B"])
    s.add_argument("--out", help="registry JSON to append the shown sequence to")

    v = sub.add_parser("verify", help="run the acceptance checks")
    v.add_argument("--only", type=int, action="append", help="criterion number (repeatable)")
    return p


def _cmd_run(args) -> int:
    from .runner import load_config, run

    cfg = load_config(args.config)
    rec = run(cfg, args.out, force=args.force, workers=args.workers, seed=args.seed)
    cached = sum(c["cached"] for c in rec["cells"])
    print(f"config {rec['config_hash'][:12]}: {len(rec['cells'])} cells ({cached} cached)")
    if "collapse" in rec:
        print("collapse:", json.dumps(rec["collapse"], sort_keys=True))
    return EXIT_OK


def _cmd_analyze(args) -> int:
    from .runner import analyze

    for path in analyze(args.results, args.models, args.out):
        print(path)
    return EXIT_OK


def _cmd_plotdata(args) -> int:
    from .runner import plotdata

    for path in plotdata(args.results, args.out, svg=args.svg):
        print(path)
    return EXIT_OK


def _cmd_sequences(args) -> int:
    if args.action == "list":
        for row in all_patterns_table():
            mark = "*" if row["default"] else " "
            print(f"{mark} {row['direction']} {row['index']:2d}  {' '.join(row['phases'])}")
        return EXIT_OK
    delta = Fraction(args.delta)
    if args.action == "search":
        sign = 1 if args.direction == "F" else -1
        hits = search_phase_patterns(slot_delays(delta, Fraction(1), args.direction), (sign * delta, 0))
        if not hits:
            print("no phase pattern satisfies the target", file=sys.stderr)
            return EXIT_VALIDATION
        for h in hits:
            print(" ".join(PHASES[p] for p in h))
        return EXIT_OK
    seq = build_sequence(args.kind, float(delta), args.tau, args.direction)
    rec = registry_record(seq)
    print(json.dumps(rec.to_dict(), indent=2, sort_keys=True))
    if args.out:
        SequenceRegistry(args.out).publish(rec)
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .acceptance import run_all

    results = run_all(set(args.only) if args.only else None)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_RUNTIME if failed else EXIT_OK


COMMANDS = {"run": _cmd_run, "analyze": _cmd_analyze, "plotdata": _cmd_plotdata,
            "sequences": _cmd_sequences, "verify": _cmd_verify}


def main(argv=None) -> int:
    from .runner import ConfigError

    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except (ConfigError, SequenceError, CapacityError, GeometryError, AliasingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, LookupError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
