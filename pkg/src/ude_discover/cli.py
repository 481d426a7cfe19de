"""Command-line entry point.

    ude-discover run <experiment-id> [--trials N] [--seed S] [--jobs J]
                 [--iters-per-step K] [--regime full|mini] [--lr X]
                 [--out DIR] [--format csv|json] [--save-model]
                 [--save-datasets] [--config FILE]

A JSON config file may supply any flag (keys named like the long flags,
dashes or underscores); explicit flags override it. Exit codes: 0 success,
1 configuration or I/O error, 2 when every trial of some cell failed.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import StructuralError
from .experiments import EXPERIMENT_IDS, ExperimentSpec, run_to_files

_REGIME_ALIASES = {"full": "full-batch", "mini": "mini-batch",
                   "full-batch": "full-batch", "mini-batch": "mini-batch"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ude-discover",
        description="Reproducible ODE-parameter discovery experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment end to end")
    run.add_argument("experiment_id", choices=EXPERIMENT_IDS)
    run.add_argument("--trials", type=int, default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--jobs", type=int, default=None)
    run.add_argument("--iters-per-step", type=int, default=None)
    run.add_argument("--regime", choices=sorted(_REGIME_ALIASES), default=None)
    run.add_argument("--lr", type=float, default=None)
    run.add_argument("--max-epochs", type=int, default=None)
    run.add_argument("--out", default=None)
    run.add_argument("--format", choices=("csv", "json"), default=None)
    run.add_argument("--save-model", action="store_true", default=None)
    run.add_argument("--save-datasets", action="store_true", default=None)
    run.add_argument("--config", default=None,
                     help="JSON file supplying any of the flags above")
    return parser


_DEFAULTS = {
    "trials": 100,
    "seed": 0,
    "jobs": 1,
    "iters_per_step": None,
    "regime": None,
    "lr": None,
    "max_epochs": None,
    "out": "results",
    "format": "csv",
    "save_model": False,
    "save_datasets": False,
}


def _merge_settings(args) -> dict:
    settings = dict(_DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            file_conf = json.load(fh)
        if not isinstance(file_conf, dict):
            raise StructuralError("config file must hold a JSON object")
        for key, value in file_conf.items():
            norm = key.replace("-", "_")
            if norm not in settings:
                raise StructuralError(f"unknown config key {key!r}")
            settings[norm] = value
    for key in settings:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = _merge_settings(args)
        overrides = {}
        if settings["iters_per_step"] is not None:
            overrides["iters_per_step"] = int(settings["iters_per_step"])
        if settings["regime"] is not None:
            overrides["regime"] = _REGIME_ALIASES[settings["regime"]]
        if settings["lr"] is not None:
            overrides["learning_rate"] = float(settings["lr"])
        if settings["max_epochs"] is not None:
            overrides["max_epochs"] = int(settings["max_epochs"])
        spec = ExperimentSpec(
            id=args.experiment_id,
            n_trials=int(settings["trials"]),
            seed=int(settings["seed"]),
            train_overrides=overrides,
            jobs=int(settings["jobs"]),
            save_datasets=bool(settings["save_datasets"]),
            save_models=bool(settings["save_model"]),
        )
        files, dead_cells = run_to_files(spec, settings["out"], settings["format"])
    except (StructuralError, OSError, json.JSONDecodeError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    for path in files:
        print(f"wrote {path}")
    if dead_cells:
        print(f"error: all trials failed in cells {dead_cells}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
