"""Command-line entry point: ``trlse --problem levy --dim 10 --method trlse,random``."""
from __future__ import annotations

import argparse
import json
import sys

from .harness import ExperimentSpec, run_experiment

# flag dest -> ExperimentSpec field
_FIELDS = {
    "problem": "problem", "dim": "dim", "method": "methods", "budget": "budget",
    "regions": "num_regions", "v_init": "v_init", "v_max": "v_max", "beta": "beta",
    "kernel": "kernel", "acq_global": "acq_global", "acq_local": "acq_local", "s_fn": "s_fn",
    "seed": "seed", "reps": "repetitions", "test_size": "test_size", "eval_every": "eval_every",
    "out": "out", "random_reinit": "random_reinit", "single_gp": "single_gp",
    "constant_s": "constant_s", "fraction": "fraction", "threshold": "threshold",
    "sample_count": "sample_count", "noise_level": "noise_level", "cache": "cache_path",
    "candidate_budget": "candidate_budget",
}


def build_parser():
    p = argparse.ArgumentParser(prog="trlse", description="Run trust-region level set estimation experiments.")
    p.add_argument("--config", help="JSON file whose keys set any flag (command line wins)")
    p.add_argument("--problem", help="levy, ackley, rosenbrock, trid or mishra03")
    p.add_argument("--dim", type=int)
    p.add_argument("--method", default="trlse", help="comma-separated: trlse, random, straddle")
    p.add_argument("--budget", type=int, default=300)
    p.add_argument("--regions", type=int, help="number of trust regions R")
    p.add_argument("--v-init", type=float)
    p.add_argument("--v-max", type=float)
    p.add_argument("--beta", type=float, default=1.96)
    p.add_argument("--kernel", default="matern52", choices=["matern52", "rbf", "rq"])
    p.add_argument("--acq-global", default="straddle", choices=["straddle", "thompson", "c2lse"])
    p.add_argument("--acq-local", default="straddle", choices=["straddle", "thompson", "c2lse"])
    p.add_argument("--s-fn", default="sigmoid", choices=["sigmoid", "linear", "constant"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--test-size", type=int, default=100_000)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--out", default="results")
    p.add_argument("--random-reinit", action="store_true")
    p.add_argument("--single-gp", action="store_true")
    p.add_argument("--constant-s", action="store_true")
    p.add_argument("--fraction", type=float, help="superlevel fraction used to calibrate h")
    p.add_argument("--threshold", type=float, help="fixed threshold; skips calibration")
    p.add_argument("--sample-count", type=int, default=10**6)
    p.add_argument("--noise-level", type=float, default=0.01)
    p.add_argument("--cache", help="threshold cache file")
    p.add_argument("--candidate-budget", type=int)
    return p


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        with open(args.config) as fh:
            config = json.load(fh)
        config = {k.replace("-", "_"): v for k, v in config.items()}
        unknown = set(config) - set(_FIELDS)
        if unknown:
            parser.error(f"unknown keys in {args.config}: {sorted(unknown)}")
        parser.set_defaults(**config)
        args = parser.parse_args(argv)
    if not args.problem:
        parser.error("--problem is required (on the command line or in --config)")
    return args


def spec_from_args(args) -> ExperimentSpec:
    return ExperimentSpec(**{field: getattr(args, dest) for dest, field in _FIELDS.items()})


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        spec = spec_from_args(args)
        rows, _ = run_experiment(spec)
    except (Exception, KeyboardInterrupt) as e:
        print(f"trlse: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    finals = {}
    for r in rows:
        finals[(r.method, r.seed)] = r
    for (method, seed), r in sorted(finals.items()):
        print(f"{method:9s} seed={seed:<4d} evaluations={r.evaluations:<6d} f1={r.f1:.4f}")
    print(f"wrote {spec.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
