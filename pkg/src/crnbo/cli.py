"""Command-line entry points for running experiments and poking simulators."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .gp import Dataset
from .harness import ExperimentConfig, run_experiment
from .hyperfit import FitBounds, FitConfig, fit_hyperparams, log_marginal_likelihood
from .rng import stream
from .simulators import REGISTRY, make_simulator


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    result = run_experiment(cfg)
    print(f"wrote results to {result.output_dir}")
    if result.failures:
        print(f"{result.failures} replication(s) aborted", file=sys.stderr)
        return 1
    return 0


def _cmd_list(_args) -> int:
    for name in sorted(REGISTRY):
        print(name)
    return 0


def _cmd_eval(args) -> int:
    params = {}
    if args.params:
        with open(args.params) as fh:
            params = json.load(fh)
    simulator = make_simulator(args.benchmark, params)
    x = np.array([float(v) for v in args.x.split(",")])
    value = simulator.evaluate(x, args.seed)
    print(json.dumps({"benchmark": args.benchmark, "x": x.tolist(), "seed": args.seed, "value": value}))
    return 0


def _cmd_fit(args) -> int:
    with open(args.data) as fh:
        payload = json.load(fh)
    data = Dataset(np.asarray(payload["x"], dtype=float),
                   np.asarray(payload["s"], dtype=int),
                   np.asarray(payload["y"], dtype=float))
    lower = np.asarray(payload.get("lower", data.x.min(axis=0)), dtype=float)
    upper = np.asarray(payload.get("upper", data.x.max(axis=0)), dtype=float)
    span = upper - lower
    upper = np.where(span > 0, upper, lower + 1.0)
    bounds = FitBounds.from_box(lower, upper, data.y)
    hp = fit_hyperparams(data, bounds, stream(args.seed, "fit"), cfg=FitConfig())
    report = {
        "n": len(data),
        "lengthscales": hp.lengthscales.tolist(),
        "target_variance": hp.target_variance,
        "offset_variance": hp.offset_variance,
        "bias_variance": hp.bias_variance,
        "white_variance": hp.white_variance,
        "prior_mean": hp.prior_mean,
        "rho": hp.rho,
        "log_marginal_likelihood": log_marginal_likelihood(data, hp),
    }
    print(json.dumps(report, indent=2))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="crnbo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.set_defaults(fn=_cmd_run)

    p_list = sub.add_parser("list-benchmarks", help="list registered benchmark names")
    p_list.set_defaults(fn=_cmd_list)

    p_eval = sub.add_parser("eval", help="single objective evaluation for debugging")
    p_eval.add_argument("--benchmark", required=True)
    p_eval.add_argument("--x", required=True, help="comma-separated solution coordinates")
    p_eval.add_argument("--seed", type=int, required=True)
    p_eval.add_argument("--params", help="JSON file of simulator parameters")
    p_eval.set_defaults(fn=_cmd_eval)

    p_fit = sub.add_parser("fit", help="standalone hyperparameter fit report")
    p_fit.add_argument("--data", required=True, help="JSON file with x, s, y (and optional lower/upper)")
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.set_defaults(fn=_cmd_fit)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
