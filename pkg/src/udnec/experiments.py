"""Reproducible experiment runner: wires solver, game, and simulator into
CSV-emitting sweeps (the data behind the usual violation / arrival-rate /
utility figures).

Every CSV starts with ``#``-prefixed metadata lines that echo the fully
resolved configuration and seed, so a file regenerates itself byte-for-byte
from its own header.  Failed or infeasible sweep cells are emitted with a
status marker and counted in the metadata, never dropped.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .analytics import TrafficModel, queue_violation_prob
from .game import best_response, find_ne, utility
from .model import LayoutError, LinkGainMatrix, RadioParams, build_layout, link_gains
from .sim import SimConfig, run_replication
from .solver import (
    BracketError,
    InfeasibleTrafficError,
    SolverConfig,
    max_arrival_rate,
    solve_qos_exponents,
    solve_theta_given_d,
)

__all__ = [
    "default_config",
    "resolve_config",
    "run_experiment",
    "write_csv",
    "EXPERIMENTS",
]

_BASE_DEFAULTS = {
    "seed": 0,
    "jobs": 1,
    "network": {
        "bandwidth_hz": 1.0e6,
        "area_side": 500.0,
        "n_candidate_ues": 1000,
        "tx_power_dbm": 23.0,
        "noise_density_dbm_hz": -174.0,
        "pathloss_offset_db": 60.0,
        "pathloss_slope_db": 37.6,
        "min_distance_m": 1.0,
    },
    "traffic": {"p": 0.2, "mean_size": 100.0, "slot": 1.0e-3},
    "qos": {"q_threshold": 10.0, "theta": 1.0e-3},
    "solver": {},
    "game": {"tol": 1.0e-6, "max_iter": 1000, "schedule": "jacobi"},
    "sim": {"runs": 200, "slots": 20000, "warmup": None},
}

_FIGURE_DEFAULTS = {
    # two-SBS violation vs traffic; the gain matrix is pinned in dB
    "fig2": {
        "network": {"beta_bar_db": [[10.0, 1.0], [2.0, 20.0]]},
        "sweep": {"knob": "mean_size",
                  "values": [1000.0, 2000.0, 3000.0, 4000.0, 5000.0,
                             6000.0, 7500.0, 9000.0]},
    },
    # average violation vs SBS density, layouts redrawn per density
    "fig3": {
        "sweep": {"n_sbs": [2, 4, 8, 12], "layout_draws": 2},
        "sim": {"runs": 100, "slots": 10000},
    },
    # max total arrival rate vs QoS requirement d, N = 8
    "fig4": {
        "network": {"n_sbs": 8},
        "sweep": {"d_values": [0.001, 0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9]},
    },
    # per-SBS max arrival rate vs density for several d
    "fig5": {
        "sweep": {"n_sbs": [2, 4, 8, 12], "d_values": [0.1, 0.3, 0.5],
                  "layout_draws": 2},
    },
    # best-response game vs density at narrowband
    "fig6": {
        "network": {"bandwidth_hz": 1.0e5},
        "sweep": {"n_sbs": [2, 4, 6, 8, 10, 12], "trace_n_sbs": 8,
                  "baseline_p": [round(0.1 * k, 1) for k in range(1, 11)]},
    },
    "custom": {"sweep": {"grid": {}, "target": "solve"}},
}

EXPERIMENTS = tuple(_FIGURE_DEFAULTS)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in (override or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def default_config(experiment: str) -> dict:
    if experiment not in _FIGURE_DEFAULTS:
        raise ValueError(f"unknown experiment {experiment!r}; pick one of {EXPERIMENTS}")
    cfg = _merge(_BASE_DEFAULTS, _FIGURE_DEFAULTS[experiment])
    cfg["experiment"] = experiment
    return cfg


def resolve_config(experiment: str, user_config: dict | None = None, **overrides) -> dict:
    """Defaults for the experiment, overlaid with a user config dict and then
    with non-None keyword overrides (seed, jobs, sim runs/slots, out path)."""
    cfg = default_config(experiment)
    if user_config:
        cfg = _merge(cfg, user_config)
        cfg["experiment"] = experiment
    for key in ("seed", "jobs", "out"):
        if overrides.get(key) is not None:
            cfg[key] = overrides[key]
    for key in ("runs", "slots"):
        if overrides.get(key) is not None:
            cfg["sim"][key] = overrides[key]
    return cfg


def _radio_from(network: dict, bandwidth_hz=None) -> RadioParams:
    return RadioParams(
        tx_power_dbm=network["tx_power_dbm"],
        noise_density_dbm_hz=network["noise_density_dbm_hz"],
        bandwidth_hz=bandwidth_hz if bandwidth_hz is not None else network["bandwidth_hz"],
        pathloss_offset_db=network["pathloss_offset_db"],
        pathloss_slope_db=network["pathloss_slope_db"],
        min_distance_m=network["min_distance_m"],
    )


def _layout_seed(seed: int, n_sbs: int, draw: int) -> int:
    return int(np.random.SeedSequence(entropy=(seed, n_sbs, draw)).generate_state(1)[0])


def gains_from_config(cfg: dict, n_sbs: int | None = None, draw: int = 0) -> LinkGainMatrix:
    """Gain matrix per the network section: explicit dB matrix or a random layout."""
    network = cfg["network"]
    if "beta_bar_db" in network:
        return LinkGainMatrix.from_db(network["beta_bar_db"], network["bandwidth_hz"])
    n = n_sbs if n_sbs is not None else network["n_sbs"]
    layout = build_layout(n, network["area_side"], network["n_candidate_ues"],
                          _radio_from(network), _layout_seed(cfg["seed"], n, draw))
    return link_gains(layout)


def traffic_from_config(cfg: dict, n: int, mean_size=None, p=None) -> TrafficModel:
    t = cfg["traffic"]
    return TrafficModel.uniform(
        n,
        t["p"] if p is None else p,
        t["mean_size"] if mean_size is None else mean_size,
        t["slot"],
    )


def sim_config_from(cfg: dict, **kw) -> SimConfig:
    s = cfg["sim"]
    return SimConfig(slots=int(s["slots"]), runs=int(s["runs"]), warmup=s.get("warmup"),
                     seed=int(cfg["seed"]), q_threshold=float(cfg["qos"]["q_threshold"]),
                     **kw)


def solver_config_from(cfg: dict) -> SolverConfig:
    return SolverConfig(**cfg.get("solver", {}))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    if isinstance(value, (np.floating, np.integer)):
        return _fmt(value.item())
    return str(value)


def write_csv(path_or_buf, meta: dict, columns: list, rows: list):
    """CSV with ``#``-prefixed metadata lines; floats via repr for stable bytes."""
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        for key in sorted(meta):
            fh.write(f"# {key} = {meta[key]}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    finally:
        if own:
            fh.close()


def _map_tasks(worker, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(worker, tasks))
    return [worker(t) for t in tasks]


# ---------------------------------------------------------------------------
# simulation workers (top level for pickling)
# ---------------------------------------------------------------------------

def _violation_runs_task(args):
    """All replications of one sim cell; returns per-run per-SBS violations
    and per-run SBS-averaged violations."""
    gains_dict, traffic, sim_cfg, full_interference = args
    gains = LinkGainMatrix.from_dict(gains_dict)
    per_run = [run_replication(gains, traffic, sim_cfg, r, full_interference).violation
               for r in range(sim_cfg.runs)]
    stack = np.stack(per_run)
    return stack, stack.mean(axis=1)


def _mean_ci(samples: np.ndarray):
    m = float(np.mean(samples))
    if samples.size > 1:
        hw = 1.96 * float(np.std(samples, ddof=1)) / math.sqrt(samples.size)
    else:
        hw = float("nan")
    return m, hw


# ---------------------------------------------------------------------------
# fig2: two-SBS violation vs traffic
# ---------------------------------------------------------------------------

def _traffic_for_point(cfg, knob, value):
    if knob == "mean_size":
        return traffic_from_config(cfg, 2, mean_size=float(value))
    if knob == "p":
        return traffic_from_config(cfg, 2, p=float(value))
    raise ValueError("fig2 sweep knob must be 'mean_size' or 'p'")


def run_fig2(cfg: dict):
    gains = gains_from_config(cfg)
    if gains.n != 2:
        raise ValueError("fig2 needs exactly two SBSs")
    knob = cfg["sweep"]["knob"]
    values = list(cfg["sweep"]["values"])
    q_th = float(cfg["qos"]["q_threshold"])
    scfg = solver_config_from(cfg)
    failures = 0

    analytic = []  # per point: dict series -> (theta, violation) or None
    sim_tasks = []
    for value in values:
        traffic = _traffic_for_point(cfg, knob, value)
        point = {}
        for series, full in (("analytic", False), ("analytic_full_interference", True)):
            try:
                res = solve_qos_exponents(gains, traffic, scfg, full_interference=full)
                viol = queue_violation_prob(res.theta_star, traffic, q_th)
                point[series] = (res.theta_star, viol,
                                 "ok" if res.converged else "not_converged")
            except (InfeasibleTrafficError, BracketError) as exc:
                point[series] = (None, None, f"infeasible:{exc.__class__.__name__}")
        analytic.append(point)
        sim_cfg = sim_config_from(cfg)
        sim_tasks.append((gains.to_dict(), traffic, sim_cfg, False))
        sim_tasks.append((gains.to_dict(), traffic, sim_cfg, True))

    sim_results = _map_tasks(_violation_runs_task, sim_tasks, int(cfg["jobs"]))

    columns = ["sweep_index", "knob", "knob_value", "mean_arrival_rate", "ue",
               "series", "violation", "ci_halfwidth", "theta_star", "status"]
    rows = []
    for idx, value in enumerate(values):
        traffic = _traffic_for_point(cfg, knob, value)
        rate = float(traffic.mean_rate()[0])
        sim_stack, _ = sim_results[2 * idx]
        sim_fi_stack, _ = sim_results[2 * idx + 1]
        for ue in range(2):
            for series in ("analytic", "analytic_full_interference"):
                theta, viol, status = analytic[idx][series]
                if viol is None:
                    failures += 1
                    rows.append([idx, knob, value, rate, ue, series,
                                 None, None, None, status])
                else:
                    rows.append([idx, knob, value, rate, ue, series,
                                 float(viol[ue]), None, float(theta[ue]), status])
            for series, stack in (("simulated", sim_stack),
                                  ("simulated_full_interference", sim_fi_stack)):
                m, hw = _mean_ci(stack[:, ue])
                rows.append([idx, knob, value, rate, ue, series, m, hw, None, "ok"])
    return columns, rows, {"failed_cells": failures}


# ---------------------------------------------------------------------------
# fig3: average violation vs density
# ---------------------------------------------------------------------------

def run_fig3(cfg: dict):
    sweep = cfg["sweep"]
    densities = list(sweep["n_sbs"])
    draws = int(sweep["layout_draws"])
    q_th = float(cfg["qos"]["q_threshold"])
    scfg = solver_config_from(cfg)
    failures = 0

    cells = []  # (n, draw) -> dict
    sim_tasks = []
    for n in densities:
        for draw in range(draws):
            cell = {"n": n, "draw": draw}
            try:
                gains = gains_from_config(cfg, n_sbs=n, draw=draw)
            except LayoutError as exc:
                cell["status"] = f"layout_failed:{exc}"
                cells.append(cell)
                continue
            traffic = traffic_from_config(cfg, n)
            for key, full in (("analytic", False), ("analytic_fi", True)):
                try:
                    res = solve_qos_exponents(gains, traffic, scfg, full_interference=full)
                    viol = queue_violation_prob(res.theta_star, traffic, q_th)
                    cell[key] = float(np.mean(viol))
                    if not res.converged:
                        cell["status"] = "not_converged"
                except (InfeasibleTrafficError, BracketError):
                    cell[key] = None
                    cell["status"] = "infeasible"
            cell.setdefault("status", "ok")
            if cell["status"] == "ok":
                sim_cfg = sim_config_from(cfg)
                cell["sim_slot"] = len(sim_tasks)
                sim_tasks.append((gains.to_dict(), traffic, sim_cfg, False))
                sim_tasks.append((gains.to_dict(), traffic, sim_cfg, True))
            cells.append(cell)

    sim_results = _map_tasks(_violation_runs_task, sim_tasks, int(cfg["jobs"]))

    columns = ["n_sbs", "series", "violation", "ci_halfwidth",
               "n_feasible_draws", "n_draws", "status"]
    rows = []
    for n in densities:
        group = [c for c in cells if c["n"] == n]
        good = [c for c in group if c["status"] in ("ok", "not_converged")
                and c.get("analytic") is not None]
        n_good = len(good)
        status = "ok" if n_good == len(group) else f"failed_draws:{len(group) - n_good}"
        failures += len(group) - n_good
        for series, key in (("analytic", "analytic"),
                            ("analytic_full_interference", "analytic_fi")):
            vals = [c[key] for c in good if c.get(key) is not None]
            rows.append([n, series, float(np.mean(vals)) if vals else None, None,
                         n_good, len(group), status])
        for series, offset in (("simulated", 0), ("simulated_full_interference", 1)):
            samples = [sim_results[c["sim_slot"] + offset][1]
                       for c in good if "sim_slot" in c]
            if samples:
                m, hw = _mean_ci(np.concatenate(samples))
            else:
                m, hw = None, None
            rows.append([n, series, m, hw, n_good, len(group), status])
    return columns, rows, {"failed_cells": failures}


# ---------------------------------------------------------------------------
# fig4 / fig5: maximum arrival rates from the pinned-requirement solver
# ---------------------------------------------------------------------------

def _rates_for_d(gains, traffic, d_value, scfg):
    """Per-SBS max arrival rates for a uniform requirement, both models."""
    n = gains.n
    d = np.full(n, float(d_value))
    out = {}
    for model, full in (("unsaturated", False), ("full_interference", True)):
        rates = []
        for i in range(n):
            theta_i = solve_theta_given_d(i, d, traffic, gains, scfg, full_interference=full)
            rates.append(max_arrival_rate(i, d, traffic, theta_i))
        out[model] = np.array(rates)
    return out


def run_fig4(cfg: dict):
    gains = gains_from_config(cfg)
    traffic = traffic_from_config(cfg, gains.n)
    scfg = solver_config_from(cfg)
    failures = 0
    columns = ["d", "model", "total_arrival_rate", "mean_rate_per_sbs", "status"]
    rows = []
    for d_value in cfg["sweep"]["d_values"]:
        try:
            rates = _rates_for_d(gains, traffic, d_value, scfg)
        except BracketError:
            failures += 2
            for model in ("unsaturated", "full_interference"):
                rows.append([d_value, model, None, None, "infeasible"])
            continue
        for model in ("unsaturated", "full_interference"):
            r = rates[model]
            rows.append([d_value, model, float(r.sum()), float(r.mean()), "ok"])
    return columns, rows, {"failed_cells": failures}


def run_fig5(cfg: dict):
    sweep = cfg["sweep"]
    densities = list(sweep["n_sbs"])
    d_values = list(sweep["d_values"])
    draws = int(sweep["layout_draws"])
    scfg = solver_config_from(cfg)
    failures = 0
    columns = ["n_sbs", "d", "model", "mean_rate_per_sbs",
               "n_feasible_draws", "n_draws", "status"]
    rows = []
    for n in densities:
        gains_per_draw = []
        for draw in range(draws):
            try:
                gains_per_draw.append(gains_from_config(cfg, n_sbs=n, draw=draw))
            except LayoutError:
                gains_per_draw.append(None)
        traffic = traffic_from_config(cfg, n)
        for d_value in d_values:
            per_model = {"unsaturated": [], "full_interference": []}
            for gains in gains_per_draw:
                if gains is None:
                    continue
                try:
                    rates = _rates_for_d(gains, traffic, d_value, scfg)
                except BracketError:
                    continue
                for model in per_model:
                    per_model[model].append(float(rates[model].mean()))
            n_good = len(per_model["unsaturated"])
            status = "ok" if n_good == draws else f"failed_draws:{draws - n_good}"
            failures += draws - n_good
            for model, vals in per_model.items():
                rows.append([n, d_value, model,
                             float(np.mean(vals)) if vals else None,
                             n_good, draws, status])
    return columns, rows, {"failed_cells": failures}


# ---------------------------------------------------------------------------
# fig6: best-response game vs density
# ---------------------------------------------------------------------------

def run_fig6(cfg: dict):
    sweep = cfg["sweep"]
    game_cfg = cfg["game"]
    theta_value = float(cfg["qos"]["theta"])
    failures = 0
    columns = ["kind", "n_sbs", "strategy", "total_utility", "iterations",
               "converged", "feasible", "iteration", "max_change", "status"]
    rows = []
    for n in sweep["n_sbs"]:
        try:
            gains = gains_from_config(cfg, n_sbs=n, draw=0)
        except LayoutError as exc:
            failures += 1
            rows.append(["utility", n, "ne", None, None, None, None, None, None,
                         f"layout_failed:{exc}"])
            continue
        traffic = traffic_from_config(cfg, n)
        theta = np.full(n, theta_value)
        state = find_ne(theta, traffic, gains, tol=float(game_cfg["tol"]),
                        max_iter=int(game_cfg["max_iter"]),
                        schedule=game_cfg.get("schedule", "jacobi"))
        rows.append(["utility", n, "ne", state.total_utility(), state.iterations,
                     state.converged, True, None, None,
                     "ok" if state.converged else "not_converged"])
        for q in sweep["baseline_p"]:
            profile = np.full(n, float(q))
            feasible = all(
                q <= best_response(i, profile, theta, traffic, gains) + 1e-9
                for i in range(n))
            total = sum(utility(float(q), theta_value, float(traffic.mean_size[i]),
                                traffic.slot) for i in range(n))
            rows.append(["utility", n, f"uniform_{q}", total, None, None,
                         feasible, None, None, "ok"])
        if n == sweep.get("trace_n_sbs"):
            for it, p_vec, change in state.trace:
                total = sum(utility(float(p_vec[i]), theta_value,
                                    float(traffic.mean_size[i]), traffic.slot)
                            for i in range(n))
                rows.append(["trace", n, "ne", total, None, None, None, it,
                             change if not math.isnan(change) else None, "ok"])
    return columns, rows, {"failed_cells": failures}


# ---------------------------------------------------------------------------
# custom: arbitrary grid over solver / sim / game entry points
# ---------------------------------------------------------------------------

def _set_path(cfg: dict, dotted: str, value):
    node = cfg
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def _custom_cell(cfg: dict):
    target = cfg["sweep"]["target"]
    gains = gains_from_config(cfg)
    traffic = traffic_from_config(cfg, gains.n)
    if target == "solve":
        res = solve_qos_exponents(gains, traffic, solver_config_from(cfg))
        viol = queue_violation_prob(res.theta_star, traffic,
                                    float(cfg["qos"]["q_threshold"]))
        return {"theta_star": json.dumps(res.theta_star.tolist()),
                "violation": json.dumps(viol.tolist()),
                "converged": res.converged}
    if target == "simulate":
        sim_cfg = sim_config_from(cfg)
        stack = np.stack([
            run_replication(gains, traffic, sim_cfg, r).violation
            for r in range(sim_cfg.runs)])
        return {"violation": json.dumps(stack.mean(axis=0).tolist()),
                "busy": None, "converged": None}
    if target == "game":
        theta = np.full(gains.n, float(cfg["qos"]["theta"]))
        state = find_ne(theta, traffic, gains, tol=float(cfg["game"]["tol"]),
                        max_iter=int(cfg["game"]["max_iter"]))
        return {"ne_p": json.dumps(state.p.tolist()),
                "total_utility": state.total_utility(),
                "converged": state.converged}
    raise ValueError("custom target must be 'solve', 'simulate', or 'game'")


def run_custom(cfg: dict):
    grid = cfg["sweep"].get("grid", {})
    keys = sorted(grid)
    value_cols = {
        "solve": ["theta_star", "violation", "converged"],
        "simulate": ["violation", "busy", "converged"],
        "game": ["ne_p", "total_utility", "converged"],
    }[cfg["sweep"]["target"]]
    columns = keys + value_cols + ["status"]
    rows = []
    failures = 0
    if any(len(grid[k]) == 0 for k in keys):
        return columns, rows, {"failed_cells": 0}
    combos = [()]
    for key in keys:
        combos = [prev + (v,) for prev in combos for v in grid[key]]
    for combo in combos:
        cell_cfg = copy.deepcopy(cfg)
        for key, value in zip(keys, combo):
            _set_path(cell_cfg, key, value)
        try:
            out = _custom_cell(cell_cfg)
            rows.append(list(combo) + [out.get(c) for c in value_cols] + ["ok"])
        except (InfeasibleTrafficError, BracketError, LayoutError, ValueError) as exc:
            failures += 1
            rows.append(list(combo) + [None] * len(value_cols)
                        + [f"failed:{exc.__class__.__name__}"])
    return columns, rows, {"failed_cells": failures}


_RUNNERS = {
    "fig2": run_fig2,
    "fig3": run_fig3,
    "fig4": run_fig4,
    "fig5": run_fig5,
    "fig6": run_fig6,
    "custom": run_custom,
}


def run_experiment(cfg: dict, out_path=None) -> str:
    """Execute the configured experiment; returns the CSV text (and writes it)."""
    experiment = cfg["experiment"]
    if experiment not in _RUNNERS:
        raise ValueError(f"unknown experiment {experiment!r}")
    columns, rows, extra = _RUNNERS[experiment](cfg)
    meta = {
        "experiment": experiment,
        "seed": cfg["seed"],
        "config": json.dumps({k: v for k, v in cfg.items() if k != "out"},
                             sort_keys=True),
        "rows": len(rows),
    }
    meta.update(extra)
    buf = io.StringIO()
    write_csv(buf, meta, columns, rows)
    text = buf.getvalue()
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            fh.write(text)
    return text
