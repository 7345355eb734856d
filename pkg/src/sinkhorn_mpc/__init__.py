"""Sinkhorn MPC: steer N linear agents to N targets by interleaving one-step
Sinkhorn updates of an entropic transport plan with closed-form
minimum-energy MPC."""

from .analysis import (
    BoundReport,
    EquilibriumResult,
    epsilon_limit_probe,
    equilibrium_map_h,
    find_equilibrium,
    fit_decay_rate,
    lyapunov_probe,
    spectral_radius,
    stability_probe,
    ultimate_bound,
)
from .controller import SwarmConfig, SwarmState, Trajectory, barycentric_targets, plan_tick, simulate, step
from .errors import InputError, NumericalBreakdownError, ParameterError, UncontrollableError, UnderflowError
from .linear_mpc import LinearPlant, MpcGains, brute_force_horizon, finite_horizon_cost, gramian, mpc_gains, mpc_input
from .transport import (
    GibbsKernel,
    ScalingPair,
    SinkhornResult,
    contraction_coefficient,
    exact_lp_assignment,
    gibbs_kernel,
    hilbert_metric,
    newton_balance,
    sinkhorn_solve,
    sinkhorn_step,
)

__version__ = "0.1.0"

__all__ = [
    "BoundReport",
    "EquilibriumResult",
    "epsilon_limit_probe",
    "equilibrium_map_h",
    "find_equilibrium",
    "fit_decay_rate",
    "lyapunov_probe",
    "spectral_radius",
    "stability_probe",
    "ultimate_bound",
    "SwarmConfig",
    "SwarmState",
    "Trajectory",
    "barycentric_targets",
    "plan_tick",
    "simulate",
    "step",
    "InputError",
    "NumericalBreakdownError",
    "ParameterError",
    "UncontrollableError",
    "UnderflowError",
    "LinearPlant",
    "MpcGains",
    "brute_force_horizon",
    "finite_horizon_cost",
    "gramian",
    "mpc_gains",
    "mpc_input",
    "GibbsKernel",
    "ScalingPair",
    "SinkhornResult",
    "contraction_coefficient",
    "exact_lp_assignment",
    "gibbs_kernel",
    "hilbert_metric",
    "newton_balance",
    "sinkhorn_solve",
    "sinkhorn_step",
]
