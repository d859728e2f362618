"""Command-line interface.

    landing run <config>                     run one experiment
    landing grid <dir> --jobs N              run a directory of configs
    landing verify <suite> --seed S          run a diagnostics suite
    landing gen-data <spec> -o <file>        generate and store a data set

The LANDING_LOG environment variable (error | info | debug) controls logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .errors import LandingError
from . import harness
from .diagnostics import SUITES
from .problems import gen_ica_data, gen_pca_data, save_instance

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _configure_logging() -> None:
    level_name = os.environ.get("LANDING_LOG", "").lower()
    level = _LOG_LEVELS.get(level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _parse_gen_spec(spec: str) -> dict:
    """Parse 'pca:n=50,p=5,samples=500,sigma=0.1,seed=1' style generator specs."""
    if ":" not in spec:
        raise LandingError(f"invalid data spec {spec!r}: expected 'kind:key=value,...'")
    kind, _, rest = spec.partition(":")
    out = {"kind": kind.strip().lower()}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        if "=" not in item:
            raise LandingError(f"invalid data spec item {item!r}")
        key, _, value = item.partition("=")
        out[key.strip().lower()] = value.strip()
    return out


def _cmd_run(args) -> int:
    cfg = harness.parse_config(args.config)
    summary = harness.run_experiment(cfg)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0 if summary["status"] == "ok" else 1


def _cmd_grid(args) -> int:
    index = harness.run_grid(args.directory, parallel_jobs=args.jobs, index_path=args.index)
    print(json.dumps(index, indent=2, sort_keys=True))
    return 0 if index["failed"] == 0 else 1


def _cmd_verify(args) -> int:
    reports, passed = harness.verify(
        args.suite, args.seed, eta_scale=args.eta_scale, mu_scale=args.mu_scale
    )
    for rep in reports:
        print(rep.line())
    if args.json:
        payload = {
            "suite": args.suite,
            "seed": args.seed,
            "passed": passed,
            "reports": [
                {
                    "name": r.name,
                    "draws": r.draws,
                    "worst_violation": r.worst_violation,
                    "tolerance": r.tolerance,
                    "passed": r.passed,
                }
                for r in reports
            ],
        }
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0 if passed else 1


def _cmd_gen_data(args) -> int:
    spec = _parse_gen_spec(args.spec)
    kind = spec.pop("kind")
    seed = int(spec.pop("seed", "0"))
    if kind == "pca":
        inst = gen_pca_data(
            int(spec.pop("n")),
            int(spec.pop("p")),
            int(spec.pop("samples")),
            float(spec.pop("sigma", "0.1")),
            seed,
        )
    elif kind == "ica":
        inst = gen_ica_data(int(spec.pop("n")), int(spec.pop("samples")), seed)
    else:
        raise LandingError(f"unknown data kind {kind!r}, expected pca or ica")
    if spec:
        raise LandingError(f"unknown data spec keys: {sorted(spec)}")
    save_instance(args.output, inst)
    print(f"wrote {kind} instance to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="landing",
        description="Retraction-free optimization under orthogonality constraints: "
        "benchmark runs, grids, and property verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("config")
    p_run.set_defaults(func=_cmd_run)

    p_grid = sub.add_parser("grid", help="run every config in a directory")
    p_grid.add_argument("directory")
    p_grid.add_argument("--jobs", type=int, default=1)
    p_grid.add_argument("--index", default=None, help="index JSON path (default <dir>/grid_index.json)")
    p_grid.set_defaults(func=_cmd_grid)

    p_verify = sub.add_parser("verify", help="run a diagnostics suite")
    p_verify.add_argument("suite", choices=sorted(SUITES))
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--json", default=None, help="write a machine-readable report here")
    p_verify.add_argument("--eta-scale", type=float, default=1.0, help=argparse.SUPPRESS)
    p_verify.add_argument("--mu-scale", type=float, default=1.0, help=argparse.SUPPRESS)
    p_verify.set_defaults(func=_cmd_verify)

    p_gen = sub.add_parser("gen-data", help="generate a data set into the binary container")
    p_gen.add_argument("spec", help="e.g. pca:n=50,p=5,samples=500,sigma=0.1,seed=1")
    p_gen.add_argument("-o", "--output", required=True)
    p_gen.set_defaults(func=_cmd_gen_data)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LandingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
