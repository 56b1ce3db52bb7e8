"""Effective-capacity analysis of ultra-dense small-cell networks under
unsaturated traffic, with a slot-level Monte Carlo validator."""

from .model import (
    FadingDraw,
    LayoutError,
    LinkGainMatrix,
    NetworkLayout,
    RadioParams,
    build_layout,
    link_gains,
    sinr,
)
from .analytics import (
    IdleProfile,
    QosSpec,
    QuadratureError,
    TrafficModel,
    delay_violation_prob,
    ec_n_sbs,
    ec_two_sbs,
    effective_bandwidth,
    idle_probability,
    pdf_sinr_type1,
    pdf_sinr_type2,
    cdf_sinr_type1,
    cdf_sinr_type2,
    queue_violation_prob,
)
from .solver import (
    BracketError,
    InfeasibleTrafficError,
    SolveResult,
    SolverConfig,
    max_arrival_rate,
    solve_qos_exponents,
    solve_qos_exponents_full_interference,
    solve_theta_given_d,
    solve_theta_given_d_full_interference,
)
from .game import GameState, best_response, find_ne, utility
from .sim import (
    RunStats,
    SimConfig,
    SimStats,
    aggregate,
    collect_sinr_samples,
    run_full_interference_replication,
    run_replication,
    simulate,
)

__version__ = "0.1.0"
