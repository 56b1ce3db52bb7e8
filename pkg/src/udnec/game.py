"""Non-cooperative traffic-saturation game and best-response iteration.

Each SBS picks its arrival probability to maximize the QoS-feasible mean
arrival rate, given fixed QoS exponents.  Raising a peer's arrival
probability lowers that peer's idle probability, hence one's own effective
capacity, hence one's own best response - the coupling the iteration has to
settle.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .analytics import IdleProfile, TrafficModel, ec_n_sbs

__all__ = [
    "GameState",
    "utility",
    "best_response",
    "find_ne",
    "arrival_prob_feasible",
    "export_trace_csv",
]


@dataclass
class GameState:
    """Strategy profile, payoffs, and the full iteration trace.

    ``trace`` holds one ``(iteration, p-vector, max coordinate change)``
    entry per sweep (entry 0 is the initial profile with a nan change);
    ``converged`` is exactly "last max change <= tol".
    """

    p: np.ndarray
    utilities: np.ndarray
    trace: list
    iterations: int
    converged: bool
    tol: float

    def total_utility(self) -> float:
        return float(np.sum(self.utilities))


def utility(p_n: float, theta_n: float, mean_size_n: float, slot: float) -> float:
    """Payoff of one SBS: mean_size * p / (theta * slot), bits/s."""
    if not 0.0 <= p_n <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if theta_n * mean_size_n >= 1.0 or theta_n <= 0.0:
        raise ValueError("theta * mean_size must lie in (0, 1)")
    return mean_size_n * p_n / (theta_n * slot)


def _capacity_against(n, p_profile, theta, traffic, gains):
    """EC of SBS n when each peer j idles with probability theta_j*mean_size_j*(1-p_j)."""
    theta = np.asarray(theta, dtype=float)
    d = theta * traffic.mean_size
    P = d * (1.0 - np.asarray(p_profile, dtype=float))
    return ec_n_sbs(n, float(theta[n]), gains, IdleProfile(P, 1.0 - d), traffic.slot)


def best_response(n: int, p_profile, theta, traffic: TrafficModel, gains) -> float:
    """Largest feasible arrival probability for SBS n, clamped to [0, 1].

    Inverts the QoS constraint EB_n(p) <= EC_n at equality:
    p = (exp(theta*slot*EC) - 1) * (1 - theta*mean_size) / (theta*mean_size),
    then clamps.  Entry ``n`` of ``p_profile`` is ignored.
    """
    theta = np.asarray(theta, dtype=float)
    d_n = float(theta[n]) * float(traffic.mean_size[n])
    if not 0.0 < d_n < 1.0:
        raise ValueError("theta * mean_size must lie in (0, 1)")
    cap = _capacity_against(n, p_profile, theta, traffic, gains)
    raw = math.expm1(float(theta[n]) * traffic.slot * cap) * (1.0 - d_n) / d_n
    return min(max(raw, 0.0), 1.0)


def arrival_prob_feasible(n: int, p_n: float, p_profile, theta,
                          traffic: TrafficModel, gains, slack: float = 1e-9) -> bool:
    """Whether arrival probability ``p_n`` satisfies SBS n's QoS constraint."""
    return p_n <= best_response(n, p_profile, theta, traffic, gains) + slack


def find_ne(theta, traffic: TrafficModel, gains, p_init=None, tol: float = 1e-6,
            max_iter: int = 1000, schedule: str = "jacobi") -> GameState:
    """Iterate best responses until no strategy moves more than ``tol``.

    ``schedule`` is "jacobi" (simultaneous updates, the default: it preserves
    symmetry across symmetric instances) or "gauss-seidel" (in-place sweeps).
    Non-convergence returns the last profile with ``converged=False``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if schedule not in ("jacobi", "gauss-seidel"):
        raise ValueError("schedule must be 'jacobi' or 'gauss-seidel'")
    n = gains.n
    theta = np.asarray(theta, dtype=float)
    p = np.ones(n) if p_init is None else np.asarray(p_init, dtype=float).copy()
    if p.shape != (n,) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("p_init must be a strategy profile in [0, 1]^n")

    trace = [(0, p.copy(), float("nan"))]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if schedule == "jacobi":
            new_p = np.array([best_response(i, p, theta, traffic, gains) for i in range(n)])
        else:
            new_p = p.copy()
            for i in range(n):
                new_p[i] = best_response(i, new_p, theta, traffic, gains)
        change = float(np.max(np.abs(new_p - p)))
        p = new_p
        trace.append((iterations, p.copy(), change))
        if change <= tol:
            converged = True
            break

    utilities = np.array([
        utility(p[i], float(theta[i]), float(traffic.mean_size[i]), traffic.slot)
        for i in range(n)
    ])
    return GameState(p=p, utilities=utilities, trace=trace,
                     iterations=iterations, converged=converged, tol=tol)


def export_trace_csv(state: GameState, path, theta=None, traffic=None):
    """Write the iteration trace: iteration, p per SBS, total utility, max change.

    The total-utility column needs the fixed exponents and traffic model and
    is omitted when either is missing.
    """
    n = state.p.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["iteration"] + [f"p_{i}" for i in range(n)]
        if theta is not None and traffic is not None:
            header.append("total_utility")
        header.append("max_change")
        writer.writerow(header)
        for it, p_vec, change in state.trace:
            row = [it] + [repr(float(v)) for v in p_vec]
            if theta is not None and traffic is not None:
                total = sum(
                    utility(float(p_vec[i]), float(np.asarray(theta)[i]),
                            float(traffic.mean_size[i]), traffic.slot)
                    for i in range(n))
                row.append(repr(total))
            row.append(repr(change) if not math.isnan(change) else "")
            writer.writerow(row)
