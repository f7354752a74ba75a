"""Command line entry point: ``groupoid-morse <command> <scenario>``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .report import FORMATS, STAGES, emit_report, run_scenario, write_artifacts
from .scenario import ScenarioError, load_scenario

OUT_ENV = "GROUPOID_MORSE_OUT"


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="groupoid-morse", description="Morse analysis of invariant functions on symmetric level sets.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("analyze", "critical orbits, indices, Morse polynomial"),
        ("flow", "analyze, then count gradient flow lines"),
        ("complex", "flow, then Witten and nerve double complexes"),
        ("verify", "everything, plus the invariant suite"),
        ("report", "run the scenario's own task list"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("scenario", help="scenario .toml/.json path or the name of a shipped scenario")
        sp.add_argument("--format", choices=FORMATS, default="json" if name == "report" else "text")
        sp.add_argument("--seed", type=int, default=None, help="override the search seed")
        sp.add_argument("--out", default=None, help=f"directory for report and dumps (default: ${OUT_ENV})")
        sp.add_argument("--timing", action="store_true", help="include wall-clock timings (breaks byte-identical output)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be nonnegative", file=sys.stderr)
        return 2
    try:
        scn = load_scenario(args.scenario)
        tasks = scn.tasks if args.command == "report" else STAGES[args.command]
        report = run_scenario(scn, tasks=tasks, seed=args.seed)
    except ScenarioError as exc:
        for path, msg in exc.errors:
            print(f"error: {path + ': ' if path else ''}{msg}", file=sys.stderr)
        return 2
    data = emit_report(report, args.format, timing=args.timing)
    out_dir = args.out or os.environ.get(OUT_ENV)
    if out_dir:
        stem = f"{scn.name}.{args.command}"
        write_artifacts(report, out_dir, stem, scn.flow.step)
        ext = {"json": "json", "csv": "csv", "text": "txt"}[args.format]
        with open(os.path.join(out_dir, f"{stem}.{ext}"), "wb") as fh:
            fh.write(data)
    sys.stdout.buffer.write(data)
    sys.stdout.flush()
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
