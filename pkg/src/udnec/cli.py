"""Command-line entry points: solve, simulate, game, figure, custom."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import experiments
from .analytics import queue_violation_prob
from .game import export_trace_csv, find_ne
from .sim import simulate, sim_config_defaults if False else None  # placeholder
from .solver import InfeasibleTrafficError, solve_qos_exponents


def _load_user_config(path):
    if path is None:
        return None
    with open(path) as fh:
        return json.load(fh)


def _instance(cfg):
    gains = experiments.gains_from_config(cfg)
    traffic = experiments.traffic_from_config(cfg, gains.n)
    return gains, traffic


def _cmd_solve(args) -> int:
    cfg = experiments.resolve_config("custom", _load_user_config(args.config),
                                     seed=args.seed)
    gains, traffic = _instance(cfg)
    try:
        res = solve_qos_exponents(gains, traffic, experiments.solver_config_from(cfg),
                                  full_interference=args.full_interference)
    except InfeasibleTrafficError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    payload = res.to_dict()
    payload["queue_violation_prob"] = queue_violation_prob(
        res.theta_star, traffic, float(cfg["qos"]["q_threshold"])).tolist()
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0 if res.converged else 3


def _cmd_simulate(args) -> int:
    cfg = experiments.resolve_config("custom", _load_user_config(args.config),
                                     seed=args.seed, jobs=args.jobs,
                                     runs=args.runs, slots=args.slots)
    gains, traffic = _instance(cfg)
    sim_cfg = experiments.sim_config_from(cfg)
    stats = simulate(gains, traffic, sim_cfg,
                     full_interference=args.full_interference,
                     jobs=int(cfg["jobs"]), raw_path=args.raw_out)
    columns = ["sbs", "violation", "violation_ci", "busy_fraction", "busy_ci",
               "mean_queue_bits", "throughput_bps", "mean_delay_slots"]
    rows = []
    for i in range(gains.n):
        rows.append([i,
                     stats.violation.mean[i], stats.violation.ci_halfwidth[i],
                     stats.busy_fraction.mean[i], stats.busy_fraction.ci_halfwidth[i],
                     stats.mean_queue.mean[i], stats.throughput.mean[i],
                     stats.mean_delay_slots.mean[i]])
    meta = {
        "experiment": "simulate",
        "seed": cfg["seed"],
        "runs": sim_cfg.runs,
        "slots": sim_cfg.slots,
        "full_interference": args.full_interference,
        "config": json.dumps({k: v for k, v in cfg.items() if k != "out"},
                             sort_keys=True),
    }
    if args.out:
        experiments.write_csv(args.out, meta, columns, rows)
    else:
        experiments.write_csv(sys.stdout, meta, columns, rows)
    return 0


def _cmd_game(args) -> int:
    cfg = experiments.resolve_config("custom", _load_user_config(args.config),
                                     seed=args.seed)
    gains, traffic = _instance(cfg)
    theta = np.full(gains.n, float(cfg["qos"]["theta"]))
    state = find_ne(theta, traffic, gains, tol=float(cfg["game"]["tol"]),
                    max_iter=int(cfg["game"]["max_iter"]),
                    schedule=cfg["game"].get("schedule", "jacobi"))
    if args.out:
        export_trace_csv(state, args.out, theta=theta, traffic=traffic)
    print(json.dumps({
        "ne_p": state.p.tolist(),
        "total_utility": state.total_utility(),
        "iterations": state.iterations,
        "converged": state.converged,
    }, indent=2, sort_keys=True))
    return 0 if state.converged else 3


def _cmd_figure(args) -> int:
    cfg = experiments.resolve_config(args.figure, _load_user_config(args.config),
                                     seed=args.seed, jobs=args.jobs,
                                     runs=args.runs, slots=args.slots)
    experiments.run_experiment(cfg, out_path=args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_custom(args) -> int:
    cfg = experiments.resolve_config("custom", _load_user_config(args.config),
                                     seed=args.seed, jobs=args.jobs)
    experiments.run_experiment(cfg, out_path=args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="udnec",
        description="Effective-capacity analysis of small-cell networks "
                    "under unsaturated traffic")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, jobs=False, sim=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        if jobs:
            p.add_argument("--jobs", type=int, default=None,
                           help="parallel worker processes")
        if sim:
            p.add_argument("--runs", type=int, default=None)
            p.add_argument("--slots", type=int, default=None)

    p = sub.add_parser("solve", help="solve the coupled QoS-exponent fixed point")
    common(p)
    p.add_argument("--out", help="write the result JSON here instead of stdout")
    p.add_argument("--full-interference", action="store_true")
    p.set_defaults(fn=_cmd_solve)

    p = sub.add_parser("simulate", help="slot-level Monte Carlo of the configured network")
    common(p, jobs=True, sim=True)
    p.add_argument("--out", help="aggregate CSV path (stdout when omitted)")
    p.add_argument("--raw-out", help="stream raw per-run records to this JSONL file")
    p.add_argument("--full-interference", action="store_true")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("game", help="iterate best responses to a Nash equilibrium")
    common(p)
    p.add_argument("--out", help="write the iteration trace CSV here")
    p.set_defaults(fn=_cmd_game)

    p = sub.add_parser("figure", help="reproduce one of the figure datasets")
    p.add_argument("figure", choices=[e for e in experiments.EXPERIMENTS if e != "custom"])
    common(p, jobs=True, sim=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(fn=_cmd_figure)

    p = sub.add_parser("custom", help="arbitrary parameter grid over solve/simulate/game")
    common(p, jobs=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(fn=_cmd_custom)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
