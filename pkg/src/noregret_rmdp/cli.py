"""Command-line entry point: ``python -m noregret_rmdp <command>``.

Commands
--------
run          one game (first value of each sweep axis)
sweep        the full q x tau x seed cross product
eval-robust  worst-case value of a saved policy
sample-alloc sample allocation and Chebyshev bound for a saved policy
fit-rate     log-log convergence slope of a trace CSV
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import harness, sampling
from .environments import make_uncertainty_set
from .game import evaluate_robustness
from .harness import ConfigError, ExperimentConfig
from .mdp_core import MdpError, load_mdp, loads_policy
from .pgd import PgdConfig


def _config_from_args(args) -> ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for name in ("preset", "rounds", "eta_pi", "eta_w", "oracle_iters", "oracle_tol", "eval_stride", "workers",
                 "env", "reference_rounds", "metric", "eta_schedule", "env_seed"):
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = val
    for name in ("q", "tau", "seed"):
        val = getattr(args, name, None)
        if val:
            overrides[name] = tuple(val)
    if args.timing:
        overrides["timing"] = True
    if args.out:
        overrides["out_dir"] = args.out
    return dataclasses.replace(cfg, **overrides)


def _add_experiment_flags(p):
    p.add_argument("--config", help="key = value config file (default: built-in defaults)")
    p.add_argument("--out", help="output directory (default: runs)")
    p.add_argument("--preset", choices=harness.PRESET_NAMES, help="algorithm (default: alg4)")
    p.add_argument("--env", help="gridworld, random or an MDP file (default: gridworld)")
    p.add_argument("--rounds", type=int, help="game rounds T (default: 500)")
    p.add_argument("--eta-pi", dest="eta_pi", type=float, help="policy noise rate (default: 0.02)")
    p.add_argument("--eta-w", dest="eta_w", type=float, help="dynamics noise rate (default: eta-pi)")
    p.add_argument("--oracle-iters", dest="oracle_iters", type=int, help="PGD budget per oracle call (default: 200)")
    p.add_argument("--oracle-tol", dest="oracle_tol", type=float, help="gradient-mapping tolerance (default: 0.1)")
    p.add_argument("--eta-schedule", dest="eta_schedule", choices=("constant", "anytime"),
                   help="noise rate per round: eta, or eta*sqrt(T/t) (default: anytime)")
    p.add_argument("--metric", choices=tuple(harness.METRICS),
                   help="robustness curve to fit: mixture, iterate or best (default: mixture)")
    p.add_argument("--env-seed", dest="env_seed", type=int, help="seed for the environment and its centre (default: 0)")
    p.add_argument("--eval-stride", dest="eval_stride", type=int, help="rounds between robustness evaluations")
    p.add_argument("--reference-rounds", dest="reference_rounds", type=int,
                   help="DRPG rounds for the reference optimum, 0 to skip (default: 1000)")
    p.add_argument("--q", type=int, action="append", help="norm order, repeatable")
    p.add_argument("--tau", type=float, action="append", help="radius, repeatable")
    p.add_argument("--seed", type=int, action="append", help="seed, repeatable")
    p.add_argument("--workers", type=int, help=f"parallel sweep points (env {harness.WORKERS_ENV} wins)")
    p.add_argument("--timing", action="store_true", help="record wall-clock columns (breaks byte-identity)")


def cmd_run(args):
    cfg = _config_from_args(args)
    cfg = dataclasses.replace(cfg, q=cfg.q[:1], tau=cfg.tau[:1], seed=cfg.seed[:1])
    return _sweep(cfg)


def cmd_sweep(args):
    return _sweep(_config_from_args(args))


def _sweep(cfg):
    rows = harness.run_experiment(cfg, log=lambda m: print(m, file=sys.stderr))
    for r in harness.rate_table(rows):
        print(f"q={r['q']} tau={r['tau']:g} slope={r['slope']:.3f} r2={r['r2']:.3f} seeds={r['seeds']}",
              file=sys.stderr)
    failed = [r for r in rows if r["status"] != "ok"]
    for r in failed:
        print(f"q={r['q']} tau={r['tau']} seed={r['seed']}: {r['error']}", file=sys.stderr)
    print(Path(cfg.out_dir) / "summary.csv")
    return 1 if failed else 0


def _load_inputs(args):
    mdp, nominal = load_mdp(args.mdp)
    if nominal is None:
        raise MdpError(f"{args.mdp}: no transitions block")
    policy = loads_policy(Path(args.policy).read_text())
    return mdp, nominal, policy


def cmd_eval_robust(args):
    mdp, nominal, policy = _load_inputs(args)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["q", "tau", "robust_value"])
    for q in args.q or [2]:
        for tau in args.tau or [0.2]:
            uset = make_uncertainty_set(nominal, q, tau)
            value = evaluate_robustness(
                mdp, policy, uset, args.restarts, PgdConfig(max_iters=args.iters, stagnation_tol=1e-8, grow=1.25),
                np.random.default_rng(args.seed),
            )
            writer.writerow([q, tau, repr(value)])
    return 0


def cmd_sample_alloc(args):
    mdp, nominal, policy = _load_inputs(args)
    system = sampling.build_value_system(mdp, policy, nominal, start=args.start)
    alloc = sampling.allocate_samples(system, args.budget)
    terms = sampling.bound_terms(system, alloc, args.sigma, args.psi)
    bound = sampling.chebyshev_error_bound(system, alloc, args.sigma, args.psi, form=args.bound_form)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["state_index", "weight", "h", "per_state_bound_term"])
    for i, (w, h, t) in enumerate(zip(system.weights, alloc.h, terms)):
        writer.writerow([i, repr(float(w)), repr(float(h)), repr(float(t))])
    print(f"# bound={bound.bound!r} confidence={bound.confidence!r} form={args.bound_form}", file=sys.stderr)
    return 0


def cmd_fit_rate(args):
    fit = harness.fit_trace_file(args.trace, args.reference, args.column)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["slope", "r2", "n_points", "reference", "degenerate"])
    writer.writerow([repr(fit.slope), repr(fit.r2), fit.n_points, repr(fit.reference), int(fit.degenerate)])
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="noregret_rmdp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one game and write its trace")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run the q x tau x seed sweep")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval-robust", help="worst-case value of a policy")
    p.add_argument("--mdp", required=True, help="MDP file with a transitions block")
    p.add_argument("--policy", required=True, help="policy file")
    p.add_argument("--q", type=int, action="append", help="norm order, repeatable (default: 2)")
    p.add_argument("--tau", type=float, action="append", help="radius, repeatable (default: 0.2)")
    p.add_argument("--restarts", type=int, default=4, help="random restarts (default: 4)")
    p.add_argument("--iters", type=int, default=500, help="PGD budget per start (default: 500)")
    p.add_argument("--seed", type=int, default=0, help="seed for restarts (default: 0)")
    p.set_defaults(func=cmd_eval_robust)

    p = sub.add_parser("sample-alloc", help="optimal reward-sample allocation")
    p.add_argument("--mdp", required=True, help="MDP file with a transitions block")
    p.add_argument("--policy", required=True, help="policy file")
    p.add_argument("--budget", type=float, required=True, help="total samples lambda")
    p.add_argument("--sigma", type=float, default=1.0, help="reward noise sd (default: 1)")
    p.add_argument("--psi", type=float, default=3.0, help="Chebyshev multiplier > 1 (default: 3)")
    p.add_argument("--start", type=int, default=0, help="start state (default: 0)")
    p.add_argument("--bound-form", dest="bound_form", choices=sampling.BOUND_FORMS, default="printed",
                   help="printed (sigma^2/h terms) or std (unit-consistent Chebyshev) (default: printed)")
    p.set_defaults(func=cmd_sample_alloc)

    p = sub.add_parser("fit-rate", help="log-log slope of robust suboptimality")
    p.add_argument("trace", help="trace CSV")
    p.add_argument("--reference", type=float, help="robust optimum (default: best value in the trace)")
    p.add_argument("--column", default="robust_value", help="column to fit (default: robust_value)")
    p.set_defaults(func=cmd_fit_rate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MdpError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
