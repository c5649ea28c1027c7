"""Online two-stage stochastic optimization with long-term constraints."""

from .problem import (ConstraintDirection, FeasibilityError,
                      ResourceAllocationInstance, ScaleBounds, TwoStageFamily,
                      TypeRealization, check_second_stage_feasible,
                      evaluate_stage_costs, resource_allocation_family,
                      reward_collection_family)
from .learners import Exp3, Hedge, OnlineGradientDescent
from .solvers import (FluidSolution, InfeasibleProgramError, InnerSolution,
                      SaddleConvergenceError, SaddleSolution,
                      constraint_feedback, fluid_opt, inner_solve,
                      lagrangian_c_subgradient, single_period_lagrangian,
                      solve_saddle)
from .environments import (CorruptionPlan, EnvironmentSchedule,
                           PredictionSchedule, Segment, UnsupportedMetricError,
                           apply_corruption, exact_predictions,
                           experiment_schedule, perturbed_predictions,
                           piecewise_schedule, prediction_inaccuracy,
                           sample_horizon, stationary_schedule,
                           two_scenario_schedules)
from .algorithms import (ConfigurationError, DalConfig, IalConfig,
                         IalPrecompute, RunTrace, dal_run, ial_precompute,
                         ial_run)

__all__ = [
    "ConstraintDirection", "FeasibilityError", "ResourceAllocationInstance",
    "ScaleBounds", "TwoStageFamily", "TypeRealization",
    "check_second_stage_feasible", "evaluate_stage_costs",
    "resource_allocation_family", "reward_collection_family",
    "Exp3", "Hedge", "OnlineGradientDescent",
    "FluidSolution", "InfeasibleProgramError", "InnerSolution",
    "SaddleConvergenceError", "SaddleSolution", "constraint_feedback",
    "fluid_opt", "inner_solve", "lagrangian_c_subgradient",
    "single_period_lagrangian", "solve_saddle",
    "CorruptionPlan", "EnvironmentSchedule", "PredictionSchedule", "Segment",
    "UnsupportedMetricError", "apply_corruption", "exact_predictions",
    "experiment_schedule", "perturbed_predictions", "piecewise_schedule",
    "prediction_inaccuracy", "sample_horizon", "stationary_schedule",
    "two_scenario_schedules",
    "ConfigurationError", "DalConfig", "IalConfig", "IalPrecompute",
    "RunTrace", "dal_run", "ial_precompute", "ial_run",
]

__version__ = "0.1.0"
