"""Command-line experiment runner.

Subcommands mirror the experiment kinds:

    mcgrad sweep     --config sweep.cfg --out fig_quadratic.csv
    mcgrad dims      --trials 30000 --out dims.csv
    mcgrad coupling  --out coupling.csv
    mcgrad blr       --data wdbc.csv --out blr_trace.csv
    mcgrad gradcheck --out report.json

Flags override config-file values; every output embeds the resolved spec and
seed, so re-running a command reproduces the artifact byte-for-byte.
"""

from __future__ import annotations

import argparse
import sys

from . import blr as blr_mod
from .errors import McgradError
from .experiments import (
    ExperimentSpec,
    blr_train,
    gradcheck_battery,
    parse_spec,
    print_spec,
    render_csv,
    render_gradcheck_table,
    run,
)

_KIND_BY_COMMAND = {
    "sweep": "variance_sweep",
    "dims": "dim_sweep",
    "coupling": "coupling_sweep",
    "blr": "blr_train",
    "gradcheck": "gradcheck",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcgrad", description="Monte Carlo gradient estimation experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, kind in _KIND_BY_COMMAND.items():
        p = sub.add_parser(cmd, help=f"run a {kind} experiment")
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=None, help="master seed (u64)")
        p.add_argument("--out", default=None, help="output file path")
        p.add_argument("--trials", type=int, default=None, help="variance trials")
        if cmd == "blr":
            p.add_argument("--data", default=None, help="WDBC CSV path")
            p.add_argument("--steps", type=int, default=None)
            p.add_argument("--estimator", default=None)
            p.add_argument("--cv", default=None)
    return parser


def _spec_from_args(args) -> ExperimentSpec:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            spec = parse_spec(fh.read())
        if spec.kind != _KIND_BY_COMMAND[args.command]:
            raise McgradError(
                f"config kind {spec.kind!r} does not match subcommand {args.command!r}"
            )
    else:
        spec = ExperimentSpec(kind=_KIND_BY_COMMAND[args.command])
    if args.seed is not None:
        spec.seed = args.seed
    if args.out is not None:
        spec.out = args.out
    if args.trials is not None:
        spec.trials = args.trials
    if args.command == "blr":
        if args.steps is not None:
            spec.steps = args.steps
        if getattr(args, "estimator", None):
            spec.estimator_id = args.estimator
        if getattr(args, "cv", None):
            spec.cv = args.cv
    return spec.resolved()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = _spec_from_args(args)
        if args.command == "blr" and getattr(args, "data", None):
            dataset = blr_mod.load_wdbc(args.data)
            header, rows, _ = blr_train(spec, dataset=dataset)
            text = render_csv(spec, header, rows)
            if spec.out:
                with open(spec.out, "w", encoding="utf-8") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
        elif args.command == "gradcheck":
            import json

            battery = gradcheck_battery(spec)
            battery["spec"] = print_spec(spec)
            text = json.dumps(battery, indent=2, sort_keys=True)
            if spec.out:
                with open(spec.out, "w", encoding="utf-8") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text + "\n")
            print(render_gradcheck_table(battery), file=sys.stderr)
            if not battery["all_ok"]:
                return 1
        else:
            text = run(spec)
            if not spec.out:
                sys.stdout.write(text)
    except McgradError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
