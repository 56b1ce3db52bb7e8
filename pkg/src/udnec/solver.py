"""Fixed-point and maximum-arrival-rate solvers.

Two problems are solved here:

1. the coupled per-SBS balance ``EC_n(theta) = EB_n(theta_n)`` via
   coordinate-wise bisection (Gauss-Seidel order, ascending SBS index);
2. the scalar balance for a pinned normalized requirement ``d``, whose
   left-hand side is monotone in theta and therefore bracketable.

Both come in an unsaturated flavour (peer idleness induced by the current
iterate) and a full-interference flavour (peer idleness pinned to zero).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .analytics import IdleProfile, TrafficModel, ec_n_sbs, effective_bandwidth

__all__ = [
    "InfeasibleTrafficError",
    "BracketError",
    "SolverConfig",
    "SolveResult",
    "solve_qos_exponents",
    "solve_qos_exponents_full_interference",
    "solve_theta_given_d",
    "solve_theta_given_d_full_interference",
    "max_arrival_rate",
]


class InfeasibleTrafficError(RuntimeError):
    """The offered load exceeds what the channel can carry for some SBS."""

    def __init__(self, message, sbs_indices=(), margins=()):
        super().__init__(message)
        self.sbs_indices = tuple(sbs_indices)
        self.margins = tuple(margins)


class BracketError(RuntimeError):
    """A scalar bisection could not bracket a sign change."""


@dataclass
class SolverConfig:
    """Knobs of the fixed-point search.

    ``tolerance`` is the absolute residual target in bits/s; when None it
    defaults to ``rel_tolerance`` times each SBS's mean arrival rate.  The
    upper bisection bound sits ``epsilon_guard`` (relative) inside the
    effective-bandwidth pole at 1/mean_size.  ``theta_init`` overrides the
    midpoint start.  ``check_brackets`` additionally evaluates the balance at
    both bracket ends after every coordinate update (slow; for diagnostics).

    ``rewiden_on_stall`` handles the one failure mode of interleaved
    coordinate bisection: peer movements shift a coordinate's balance curve,
    so a bracket narrowed early can exclude the root it is chasing.  When a
    coordinate's bracket has collapsed below ``stall_width_rel`` times its
    initial width while its residual still exceeds tolerance, that bracket
    (one coordinate per sweep, worst residual first) is reopened to its full
    range and re-bisected against the by-then frozen peers.  Disable it to
    run the strict interleaved scheme.
    """

    tolerance: float | None = None
    rel_tolerance: float = 1.0e-3
    max_iterations: int = 2000
    epsilon_guard: float = 1.0e-6
    theta_init: np.ndarray | None = None
    theta_rel_tol: float = 1.0e-10
    check_brackets: bool = False
    rewiden_on_stall: bool = True
    stall_width_rel: float = 1.0e-8


@dataclass
class SolveResult:
    """Outcome of the coupled fixed-point search, with enough echo to rerun it."""

    theta_star: np.ndarray
    residuals: np.ndarray
    iterations: int
    converged: bool
    idle_profile: IdleProfile
    xi: np.ndarray
    ec_evaluations: int
    full_interference: bool
    bracket_violations: int | None = None
    inputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "theta_star": self.theta_star.tolist(),
            "residuals": self.residuals.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "idle_probability": self.idle_profile.P.tolist(),
            "nonempty_buffer_probability": self.idle_profile.eta.tolist(),
            "xi": self.xi.tolist(),
            "ec_evaluations": self.ec_evaluations,
            "full_interference": self.full_interference,
            "bracket_violations": self.bracket_violations,
            "inputs": self.inputs,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def _input_echo(gains, traffic, config, extra=None):
    echo = {
        "beta_bar": gains.beta_bar.tolist(),
        "bandwidth_hz": gains.bandwidth_hz,
        "p": traffic.p.tolist(),
        "mean_size": traffic.mean_size.tolist(),
        "slot": traffic.slot,
        "tolerance": config.tolerance,
        "rel_tolerance": config.rel_tolerance,
        "max_iterations": config.max_iterations,
        "epsilon_guard": config.epsilon_guard,
    }
    if extra:
        echo.update(extra)
    return echo


def _idle_for(theta, traffic, full_interference):
    if full_interference:
        return IdleProfile.full_interference(traffic.n)
    return IdleProfile.from_theta(theta, traffic)


def _check_feasibility(gains, traffic, config, full_interference):
    """Every queue must be stable at a vanishing QoS exponent: EC > mean rate."""
    theta_probe = config.epsilon_guard / traffic.mean_size
    idle = _idle_for(theta_probe, traffic, full_interference)
    arrival = effective_bandwidth(traffic, theta_probe)
    bad, margins = [], []
    for i in range(traffic.n):
        cap = ec_n_sbs(i, theta_probe[i], gains, idle, traffic.slot)
        if cap <= arrival[i]:
            bad.append(i)
            margins.append(cap - arrival[i])
    if bad:
        raise InfeasibleTrafficError(
            "offered load exceeds capacity at vanishing QoS exponent for SBS "
            + ", ".join(str(i) for i in bad),
            sbs_indices=bad, margins=margins)
    return traffic.n  # number of EC evaluations spent


def solve_qos_exponents(gains, traffic: TrafficModel, config: SolverConfig | None = None,
                        full_interference: bool = False) -> SolveResult:
    """Coordinate-wise bisection for the coupled balance EC_n(theta) = EB_n(theta_n).

    Brackets start at [0, (1-epsilon_guard)/mean_size) per SBS with theta at
    the midpoint.  Each sweep visits the SBSs in ascending order; a capacity
    surplus raises the lower bound, a deficit lowers the upper bound, and the
    coordinate moves to the fresh midpoint.  Peer idleness is recomputed from
    the current iterate at every capacity evaluation (or pinned to zero for
    the full-interference baseline).  The sweep loop stops once every
    residual |EC_n - EB_n| is within its tolerance; non-convergence returns
    the best iterate flagged ``converged=False``.
    """
    config = config or SolverConfig()
    if gains.n != traffic.n:
        raise ValueError("gain matrix and traffic model disagree on the SBS count")
    if np.any(traffic.p <= 0.0):
        raise ValueError("every SBS needs a positive arrival probability; "
                         "drop traffic-free SBSs from the instance instead")

    n = traffic.n
    slot = traffic.slot
    mean_rate = traffic.mean_rate()
    if config.tolerance is not None:
        xi = np.full(n, float(config.tolerance))
    else:
        xi = config.rel_tolerance * mean_rate

    ec_evals = _check_feasibility(gains, traffic, config, full_interference)

    lb = np.zeros(n)
    ub0 = (1.0 - config.epsilon_guard) / traffic.mean_size
    ub = ub0.copy()
    if config.theta_init is not None:
        theta = np.asarray(config.theta_init, dtype=float).copy()
        if theta.shape != (n,) or np.any(theta <= lb) or np.any(theta >= ub):
            raise ValueError("theta_init must lie strictly inside the bisection brackets")
    else:
        theta = 0.5 * (lb + ub)

    bracket_violations = 0 if config.check_brackets else None
    residuals = np.full(n, np.inf)
    converged = False
    sweeps = 0

    def capacity(i, th_vec, th_i):
        nonlocal ec_evals
        ec_evals += 1
        idle = _idle_for(th_vec, traffic, full_interference)
        return ec_n_sbs(i, th_i, gains, idle, slot)

    def arrival(i, th_i):
        return math.log(traffic.p[i] / (1.0 - th_i * traffic.mean_size[i])
                        + 1.0 - traffic.p[i]) / (th_i * slot)

    for sweeps in range(1, config.max_iterations + 1):
        theta_before = theta.copy()
        for i in range(n):
            if capacity(i, theta, theta[i]) > arrival(i, theta[i]):
                lb[i] = theta[i]
            else:
                ub[i] = theta[i]
            theta[i] = 0.5 * (lb[i] + ub[i])
            if config.check_brackets:
                # the balance must stay >= 0 at the lower end and <= 0 at the upper
                if lb[i] > 0.0 and capacity(i, theta, lb[i]) < arrival(i, lb[i]):
                    bracket_violations += 1
                if capacity(i, theta, ub[i]) > arrival(i, ub[i]):
                    bracket_violations += 1

        residuals = np.array([
            abs(capacity(i, theta, theta[i]) - arrival(i, theta[i]))
            for i in range(n)
        ])
        if np.all(residuals <= xi):
            converged = True
            break

        all_collapsed = np.all(ub - lb < config.stall_width_rel * ub0)
        if config.rewiden_on_stall and all_collapsed:
            # every bracket is exhausted yet some balance is still off: peer
            # movement invalidated that bracket earlier.  Reopen exactly one
            # coordinate (worst residual); everything else stays frozen, so
            # it re-bisects against a fixed peer profile (an exact scalar
            # solve), and the alternation converges with the coupling.
            worst = max(np.flatnonzero(residuals > xi), key=lambda i: residuals[i] / xi[i])
            lb[worst] = 0.0
            ub[worst] = ub0[worst]
        elif np.array_equal(theta, theta_before):
            break  # brackets exhausted at float resolution without meeting xi

    idle = _idle_for(theta, traffic, full_interference)
    return SolveResult(
        theta_star=theta,
        residuals=residuals,
        iterations=sweeps,
        converged=converged,
        idle_profile=idle,
        xi=xi,
        ec_evaluations=ec_evals,
        full_interference=full_interference,
        bracket_violations=bracket_violations,
        inputs=_input_echo(gains, traffic, config,
                           {"full_interference": full_interference}),
    )


def solve_qos_exponents_full_interference(gains, traffic, config=None) -> SolveResult:
    """Fixed point of the saturated baseline: every peer always interferes."""
    return solve_qos_exponents(gains, traffic, config, full_interference=True)


def _theta_d_lhs(n, theta, gains, idle, slot):
    return theta * slot * ec_n_sbs(n, theta, gains, idle, slot)


def solve_theta_given_d(n: int, d, traffic: TrafficModel, gains,
                        config: SolverConfig | None = None,
                        full_interference: bool = False) -> float:
    """QoS exponent of SBS ``n`` for pinned normalized requirements ``d``.

    Solves theta*slot*EC_n(theta) = ln(p_n/(1-d_n) + 1 - p_n) by scalar
    bisection; the left-hand side equals -ln E[exp(-theta*r*slot)], which is
    monotone increasing in theta, so the root is bracketed by doubling an
    upper bound from the natural scale 1/(B*slot).  Peer idleness is pinned
    to d_j*(1-p_j) (or zero in the full-interference variant).
    """
    config = config or SolverConfig()
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if d.shape[0] != gains.n:
        raise ValueError("d must provide one requirement per SBS")
    if np.any(d <= 0.0) or np.any(d >= 1.0):
        raise ValueError("every d must lie in (0, 1)")
    if not 0 <= n < gains.n:
        raise ValueError("SBS index out of range")
    p_n = float(traffic.p[n])
    if p_n <= 0.0:
        raise ValueError("SBS with zero arrival probability has no QoS exponent")

    slot = traffic.slot
    idle = (IdleProfile.full_interference(gains.n) if full_interference
            else IdleProfile.from_d(d, traffic.p))
    rhs = math.log(p_n / (1.0 - d[n]) + 1.0 - p_n)

    hi = 1.0 / (gains.bandwidth_hz * slot)
    for _ in range(200):
        if _theta_d_lhs(n, hi, gains, idle, slot) > rhs:
            break
        hi *= 2.0
    else:
        raise BracketError(
            f"no sign change up to theta={hi:.3e}; requirement d={d[n]} "
            f"is infeasible for SBS {n}")

    lo = 0.0
    while hi - lo > config.theta_rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break  # float resolution exhausted
        if _theta_d_lhs(n, mid, gains, idle, slot) < rhs:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_theta_given_d_full_interference(n, d, traffic, gains, config=None) -> float:
    return solve_theta_given_d(n, d, traffic, gains, config, full_interference=True)


def max_arrival_rate(n: int, d, traffic: TrafficModel, theta_star_n: float) -> float:
    """Maximum sustainable mean arrival rate d_n*p_n/(theta_n*slot), bits/s."""
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if theta_star_n <= 0.0:
        raise ValueError("theta must be positive")
    return float(d[n] * traffic.p[n] / (theta_star_n * traffic.slot))
