"""Ergodic BSDEs solved through their random return-time representation.

Modules: ``sde`` (factor paths and return times), ``drivers`` (generators),
``oracles`` (closed-form benchmarks), ``ergodic_cost`` (Monte Carlo lambda),
``nn`` and ``solvers`` (GeBSDE, LAeBSDE, regression scheme), ``utilities``
(forward utilities and strategies), ``metrics`` (tables) and ``cli``.
"""
from .drivers import ConvexSet, Driver, RiskPremiumSpec
from .ergodic_cost import (LambdaEstimate, estimate_lambda, lambda_colehopf_general, lambda_colehopf_power,
                           lambda_linear_exp, lambda_ratio)
from .errors import EbsdeError
from .oracles import example1_solution, example2_solution
from .sde import FactorModel, PathBundle, TimeGrid, simulate_paths
from .solvers import SolverConfig, SolvedEbsde, backward_regression, evaluate, gebsde_train, laebsde_train

__version__ = "0.1.0"

__all__ = [
    "ConvexSet", "Driver", "RiskPremiumSpec", "LambdaEstimate", "estimate_lambda", "lambda_colehopf_general",
    "lambda_colehopf_power", "lambda_linear_exp", "lambda_ratio", "EbsdeError", "example1_solution",
    "example2_solution", "FactorModel", "PathBundle", "TimeGrid", "simulate_paths", "SolverConfig",
    "SolvedEbsde", "backward_regression", "evaluate", "gebsde_train", "laebsde_train",
]
