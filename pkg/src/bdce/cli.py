"""Command line entry point: ``bdce run`` and ``bdce selftest``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .channel import ScenarioConfig
from .harness import ExperimentSpec, format_csv, max_workers, run_experiment


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdce", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte-Carlo sweep and write NMSE rows as CSV")
    run.add_argument("--config", type=Path, help="JSON experiment file (keys mirror ExperimentSpec)")
    run.add_argument("--sweep", choices=("snr_db", "n_pilot_symbols", "eta_max", "bandwidth"))
    run.add_argument("--values", type=_floats, help="comma separated sweep values")
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--estimators", type=_names, help="subset of hmp,mdgpp,somp,oracle")
    run.add_argument("--out", help="CSV path; stdout when omitted")
    run.add_argument("--workers", type=int, help="worker processes; 0 means all cores")
    run.add_argument("--timing", action="store_true", help="fill the wall_ms column")
    run.add_argument("--max-failed-frac", type=float,
                     help="fraction of flagged trials tolerated before a nonzero exit")
    run.add_argument("--full-scale", action="store_true",
                     help="start from the large array configuration instead of the desk one")

    test = sub.add_parser("selftest", help="run the built-in oracle checks")
    test.add_argument("--seed", type=int, default=0)
    return parser


def spec_from_args(args) -> ExperimentSpec:
    data = json.loads(args.config.read_text()) if args.config else {}
    if args.full_scale:
        base = ScenarioConfig.full_scale().to_dict()
        base.update(data.get("scenario", {}))
        data["scenario"] = base
    overrides = {"sweep_var": args.sweep, "values": args.values, "trials": args.trials,
                 "seed": args.seed, "estimators": args.estimators, "out": args.out,
                 "max_failed_frac": args.max_failed_frac}
    if args.sweep is not None:
        data.pop("sweep", None)
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    if args.workers is not None:
        data["workers"] = args.workers or max_workers()
    if args.timing:
        data["timing"] = True
    return ExperimentSpec.from_dict(data)


def cmd_run(args) -> int:
    try:
        spec = spec_from_args(args)
    except (ValueError, TypeError, json.JSONDecodeError, OSError) as exc:
        print(f"bdce: {exc}", file=sys.stderr)
        return 2
    result = run_experiment(spec)
    if not spec.out:
        sys.stdout.write(format_csv(result.records))
    if result.flagged:
        print(f"bdce: {len(result.flagged)} of {result.total} estimator runs flagged "
              f"({result.flagged_frac:.1%})", file=sys.stderr)
    return 1 if result.breached else 0


def cmd_selftest(args) -> int:
    from .selftest import run_all

    ok = True
    for name, passed, detail in run_all(args.seed):
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        ok &= passed
    return 0 if ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    return cmd_run(args) if args.command == "run" else cmd_selftest(args)


if __name__ == "__main__":
    sys.exit(main())
