"""Experiment runner CLI.

    bimlab <subcommand> [--config cfg.json] [--seed N] [--workers N]
                        [--out DIR] [--check] [--key value ...]

Config resolution: schema defaults <- JSON config file <- command-line
overrides.  Unknown config keys are rejected.  Every run writes report.json
and metrics.csv into the output directory, prints a one-line JSON summary on
stdout, and logs diagnostics on stderr.  Exit codes: 0 ok, 1 config error,
2 runtime failure, 3 failed --check.
"""

import argparse
import json
import os
import sys
import time

from ._backend import BACKEND, HAVE_NUMBA
from .experiments import EXPERIMENTS
from .reporting import ExperimentReport


class ConfigError(ValueError):
    pass


_COMMON = {
    "seed": (int, 1),
    "workers": (int, 0),  # 0 = library default
}

SCHEMAS = {
    "kernel-check": {
        "kernels": (int, 1000),
        "tricky": (int, 200),
    },
    "cone-search": {
        "seeds": (int, 100),
        "n": (int, 12),
        "u1": (float, 1.3),
        "dt": (float, 1e-4),
        "start_radius": (float, 1.0),
        "min_successes": (int, 99),
    },
    "cover-sim": {
        "replicas": (int, 100),
        "n": (int, 20),
        "u1": (float, 1.5),
        "dt": (float, 4e-6),
        "start_radius": (float, 1.0),
        "budget_coeff": (float, 2.0),
        "chernoff_K": (float, 0.5),
        "min_failure_rate": (float, 0.95),
    },
    "hitting-bench": {
        "d_values": (list, [2.0 ** -4, 2.0 ** -6, 2.0 ** -8]),
        "grid": (int, 200),
        "samples": (int, 100_000),
        "spread_tol": (float, 0.25),
    },
    "chain-law": {
        "p_values": (list, [1.0, 2.0, 5.0]),
        "steps": (int, 1_000_000),
    },
    "layer-k": {
        "traces": (int, 5),
        "dt": (float, 1e-4),
        "layers": (list, [-3, -2, -1]),
        "M": (float, 1.2e5),
        "sources": (int, 10),
        "cells": (int, 6),
        "samples_per_source": (int, 400),
        "min_median_fraction": (float, 0.5),
    },
    "coupling-sim": {
        "m_values": (list, [4, 8]),
        "cells": (int, 6),
        "row_floor": (float, 0.05),
        "replicas": (int, 100_000),
    },
    "csl": {
        "traces": (int, 20),
        "starts": (int, 20),
        "dt": (float, 1e-4),
        "samples": (int, 200),
        "delta_ladder": (list, [0.2, 0.1, 0.05, 0.02]),
        "delta_check": (float, 0.05),
        "eps_thick": (float, 1e-3),
        "min_start_dist": (float, 2.0 ** -4),
        "min_accept": (int, 30),
        "min_accept_required": (int, 30),
    },
    "escape-polyline": {
        "traces": (int, 10),
        "starts": (int, 50),
        "dt": (float, 1e-4),
        "u1": (float, 1.2),
        "beta": (float, 0.9),
        "max_depth": (int, 10),
        "min_build_rate": (float, 0.99),
    },
    "xi-estimate": {
        "k": (int, 1),
        "lam": (float, 2.0),
        "n_values": (list, [1.0, 1.5, 2.0, 2.5]),
        "outer": (int, 2000),
        "inner": (int, 200),
        "tube_coeff": (float, 2.0 ** -8),
        "dt": (float, 1e-4),
        "slope_lo": (float, 0.8),
        "slope_hi": (float, 1.2),
    },
}


def resolve_config(subcommand: str, file_cfg: dict, overrides: dict) -> dict:
    schema = dict(_COMMON)
    schema.update(SCHEMAS[subcommand])
    cfg = {k: default for k, (_, default) in schema.items()}
    for source, tag in ((file_cfg, "config file"), (overrides, "command line")):
        for k, v in source.items():
            if k not in schema:
                raise ConfigError(f"unknown key {k!r} in {tag} for {subcommand}")
            typ = schema[k][0]
            try:
                if typ is list:
                    if isinstance(v, str):
                        v = [float(t) for t in v.split(",") if t]
                    cfg[k] = list(v)
                else:
                    cfg[k] = typ(v)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"bad value for {k!r}: {e}") from e
    return cfg


def _parse_overrides(pairs):
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.replace("-", "_")] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bimlab", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="master seed (64-bit)")
        p.add_argument("--workers", type=int, default=None,
                       help="compute threads (BIMLAB_WORKERS fallback)")
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--check", action="store_true",
                       help="exit 3 unless the experiment's acceptance check passes")
        p.add_argument("set", nargs="*", metavar="key=value",
                       help="config overrides")
    return ap


def run(subcommand: str, config_path=None, overrides=None, seed=None,
        workers=None, out_dir=None, check=False) -> int:
    try:
        file_cfg = {}
        if config_path:
            with open(config_path) as fh:
                file_cfg = json.load(fh)
            if not isinstance(file_cfg, dict):
                raise ConfigError("config file must hold a JSON object")
        ov = dict(overrides or {})
        if seed is not None:
            ov["seed"] = seed
        if workers is not None:
            ov["workers"] = workers
        elif "workers" not in ov and os.environ.get("BIMLAB_WORKERS"):
            ov["workers"] = os.environ["BIMLAB_WORKERS"]
        cfg = resolve_config(subcommand, file_cfg, ov)
    except (ConfigError, OSError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1

    if cfg["workers"] > 0 and HAVE_NUMBA:
        import numba

        numba.set_num_threads(max(1, min(cfg["workers"], numba.config.NUMBA_NUM_THREADS)))

    report = ExperimentReport(experiment=subcommand, config=cfg,
                              seed=cfg["seed"], backend=BACKEND)
    t0 = time.time()
    try:
        passed = EXPERIMENTS[subcommand](cfg, report)
    except Exception as e:  # runtime failure: report and exit 2
        print(f"runtime failure in {subcommand}: {type(e).__name__}: {e}",
              file=sys.stderr)
        return 2
    report.wall_seconds = time.time() - t0
    report.check_passed = None if passed is None else bool(passed)

    out = out_dir or cfg.get("out") or "."
    os.makedirs(out, exist_ok=True)
    report.write_json(os.path.join(out, "report.json"))
    report.write_csv(os.path.join(out, "metrics.csv"))
    print(report.summary_json())
    print(f"{subcommand}: wall {report.wall_seconds:.1f}s, "
          f"check={'n/a' if passed is None else passed}", file=sys.stderr)
    if check and passed is False:
        return 3
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = _parse_overrides(args.set)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    return run(args.subcommand, config_path=args.config, overrides=overrides,
               seed=args.seed, workers=args.workers, out_dir=args.out,
               check=args.check)


if __name__ == "__main__":
    sys.exit(main())
