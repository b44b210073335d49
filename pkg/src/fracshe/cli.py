"""Command line entry point ``fracshe``.

Exit status: 0 pass, 1 experiment failure, 2 configuration error, 3 numeric
error.  Global options may also be set through ``FRACSHE_SEED``,
``FRACSHE_THREADS`` and ``FRACSHE_OUTPUT_DIR``; command line flags win.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .constants import all_constants
from .errors import ConfigurationError, FracSHEError
from .estimators import q_variation
from .fbm import sample_fbm
from .grid import green_kernel, make_grid
from .harness import EXPERIMENT_NAMES, ExperimentConfig, csv_bytes, execute, load_config, replay, write_simulation
from .model import ModelParams
from .rng import Stream

VERIFY_NAMES = ("clt", "lil", "variation", "localize", "holder", "variance", "increments", "noise", "kernel",
                "fbm", "constants")


def _env(name: str, cast):
    raw = os.environ.get(f"FRACSHE_{name}")
    if raw is None:
        return None
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigurationError(f"FRACSHE_{name}={raw!r} is not a valid value") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps a subcommand from resetting a flag given before it
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="ensemble seed (overrides the config)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads for member chunks")
    common.add_argument("--output-dir", default=argparse.SUPPRESS, help="root directory for run artifacts")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="fracshe", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("constants", parents=[common], help="print the model constants as JSON")
    c.add_argument("--alpha", type=float, default=None)
    c.add_argument("--gamma", type=float, default=None)
    c.add_argument("--dim", type=int, default=1)
    c.add_argument("--config", default=None)

    k = sub.add_parser("kernel", parents=[common], help="CSV of the heat kernel on a grid")
    k.add_argument("--alpha", type=float, required=True)
    k.add_argument("--t", type=float, required=True)
    k.add_argument("--dim", type=int, default=1)
    k.add_argument("--n", type=int, default=1024)
    k.add_argument("--extent", type=float, default=32.0)

    f = sub.add_parser("fbm", parents=[common], help="sample fBm paths on [0, 1]")
    f.add_argument("--hurst", type=float, required=True)
    f.add_argument("--n", type=int, default=1024)
    f.add_argument("--samples", type=int, default=1)
    f.add_argument("--summary", action="store_true", help="print summary statistics instead of paths")

    s = sub.add_parser("simulate", parents=[common], help="simulate an ensemble and dump the fields")
    s.add_argument("--config", required=True)

    v = sub.add_parser("verify", parents=[common], help="run one experiment from a config")
    v.add_argument("experiment", choices=VERIFY_NAMES)
    v.add_argument("--config", required=True)

    r = sub.add_parser("run", parents=[common], help="run every experiment in a config")
    r.add_argument("--config", required=True)

    rp = sub.add_parser("replay", parents=[common], help="rerun a stored run and compare artifacts")
    rp.add_argument("run_id")
    return p


def _globals(args) -> dict:
    seed = getattr(args, "seed", None)
    seed = _env("SEED", int) if seed is None else seed
    threads = getattr(args, "threads", None)
    threads = _env("THREADS", int) if threads is None else threads
    out = getattr(args, "output_dir", None)
    out = _env("OUTPUT_DIR", str) if out is None else out
    if threads is not None and threads < 1:
        raise ConfigurationError("threads must be at least 1")
    return {"seed": seed, "threads": threads or 1, "output_dir": out}


def _print_record(record) -> None:
    print(json.dumps({
        "run_id": record.run_id, "directory": str(record.directory), "pass": record.passed,
        "verdicts": {k: v["pass"] for k, v in record.verdicts.items()}, "artifacts": record.artifacts,
    }, indent=2))


def _dispatch(args) -> int:
    g = _globals(args)
    overrides = {"seed": g["seed"], "output_dir": g["output_dir"]}
    if args.command == "constants":
        if args.config:
            params = load_config(args.config, overrides).model
        else:
            if args.alpha is None or args.gamma is None:
                raise ConfigurationError("constants needs --alpha and --gamma, or --config")
            params = ModelParams(args.alpha, args.gamma, args.dim)
        print(json.dumps([r.to_dict() for r in all_constants(params)], indent=2))
        return 0
    if args.command == "kernel":
        grid = make_grid(args.dim, args.extent, args.n)
        ks = green_kernel(grid, args.alpha, args.t)
        pts = grid.points().reshape(-1, grid.dim)
        header = [f"x{i + 1}" for i in range(grid.dim)] if grid.dim > 1 else ["x"]
        sys.stdout.write(csv_bytes(header + ["G"], ([*p, v] for p, v in zip(pts, ks.values.ravel()))).decode())
        return 0
    if args.command == "fbm":
        x = np.linspace(0.0, 1.0, args.n + 1)
        field = sample_fbm(x, args.hurst, Stream(g["seed"] or 0), size=args.samples)
        paths = np.atleast_2d(field.values)
        if args.summary:
            v = q_variation(paths, 1.0 / args.hurst)
            print(json.dumps({"hurst": args.hurst, "samples": args.samples, "n": args.n,
                              "var_at_1": float(paths[:, -1].var()), "mean_end_value": float(paths[:, -1].mean()),
                              "mean_1_over_H_variation": float(np.mean(v))}, indent=2))
        else:
            rows = ([m, xi, val] for m in range(paths.shape[0]) for xi, val in zip(x, paths[m]))
            sys.stdout.write(csv_bytes(["sample", "x", "value"], rows).decode())
        return 0
    if args.command == "simulate":
        record = write_simulation(load_config(args.config, overrides), g["threads"])
        _print_record(record)
        return 0
    if args.command in ("verify", "run"):
        cfg = load_config(args.config, overrides)
        only = None
        if args.command == "verify":
            if args.experiment not in EXPERIMENT_NAMES:
                raise ConfigurationError(f"unknown experiment {args.experiment!r}")
            if args.experiment not in [e["name"] for e in cfg.experiments]:
                data = cfg.to_dict()
                data["experiments"].append({"name": args.experiment})
                cfg = ExperimentConfig.from_dict(data)
            only = [args.experiment]
        record, _ = execute(cfg, g["threads"], only)
        _print_record(record)
        return record.exit_code
    if args.command == "replay":
        record = replay(args.run_id, g["output_dir"] or "runs", g["threads"])
        print(json.dumps({"run_id": record.run_id, "replay": "identical", "artifacts": record.artifacts}))
        return 0
    raise ConfigurationError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except FracSHEError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}),
              file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
