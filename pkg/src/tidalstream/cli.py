"""Command-line entry point: ``tidalstream <command> [--config FILE] [--key value ...]``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields

from tidalstream import __version__
from tidalstream.errors import TidalStreamError
from tidalstream.report import (COMMAND_STAGES, RunConfig, StageError, dumps,
                                load_config, run_pipeline, write_synthetic)

HELP = {
    "fit": "fit the monotone cosine model and write lambda-hat",
    "test": "permutation tests for streaming",
    "ci": "confidence sets for lambda at the configured radii",
    "changepoint": "segmented-regression threshold fits",
    "splitpoint": "best-stump split point and its bootstrap set",
    "calibrate": "Monte Carlo quantile table for the limiting laws",
    "synth": "write a synthetic catalogue CSV",
    "run": "full pipeline",
    "describe": "summary statistics of the catalogue",
}


def _flag(name):
    return "--" + name.replace("_", "-")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value file; flags override its entries")
    for f in fields(RunConfig):
        kind = type(f.default)
        if kind is bool:
            common.add_argument(_flag(f.name), dest=f.name, nargs="?", const="true",
                                default=argparse.SUPPRESS, metavar="BOOL")
        else:
            metavar = "LIST" if kind is tuple else kind.__name__.upper()
            common.add_argument(_flag(f.name), dest=f.name, default=argparse.SUPPRESS,
                                metavar=metavar, help=f"default: {_show(f.default)}")
    parser = argparse.ArgumentParser(prog="tidalstream",
                                     description="Monotone streaming-motion analysis of stellar "
                                                 "line-of-sight velocities.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in HELP.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "synth":
            p.add_argument("--output", help="CSV path (default: OUT_DIR/synthetic.csv)")
    return parser


def _show(v):
    return ",".join(str(x) for x in v) if isinstance(v, tuple) else repr(v)


def _overrides(ns):
    names = {f.name for f in fields(RunConfig)}
    return {k: v for k, v in vars(ns).items() if k in names}


def _fail(stage, exc, code=2):
    err = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(json.dumps({"error": err}, sort_keys=True) + "\n")
    return code


def main(argv=None):
    ns = build_parser().parse_args(argv)
    overrides = _overrides(ns)
    if ns.command == "calibrate":
        overrides.setdefault("calibrate_quantiles", "true")
    try:
        cfg = load_config(ns.config, overrides)
    except (TidalStreamError, OSError) as exc:
        return _fail("config", exc)
    try:
        if ns.command == "synth":
            print(write_synthetic(cfg, ns.output))
            return 0
        report, files = run_pipeline(cfg, COMMAND_STAGES[ns.command])
    except StageError as exc:
        return _fail(exc.stage, exc.cause)
    except (TidalStreamError, OSError) as exc:
        return _fail(ns.command, exc)
    if ns.command == "describe":
        sys.stdout.write(dumps(report["describe"]))
    else:
        print(files["report.json"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
