"""Finite-volume simulator for the individual-clustering model.

The density ``u`` disperses, drifts with a mollified velocity ``w`` slaved
to ``grad E(u)``, and reproduces at rate ``r u E(u)``; a monitor checks the
discrete a-priori estimates at every step.
"""

__version__ = "0.1.0"

from .elliptic import HelmholtzOperator, SolveReport, regularity_ratio, solve_velocity
from .evolution import ModelParams, RunControls, Stepper, initial_density, run
from .grid import Grid, VectorField, build_grid
from .monitor import GuardConfig, Monitor, MonitorConfig
from .reaction import ReactionModel, bistable, monostable

__all__ = [
    "Grid",
    "GuardConfig",
    "HelmholtzOperator",
    "ModelParams",
    "Monitor",
    "MonitorConfig",
    "ReactionModel",
    "RunControls",
    "SolveReport",
    "Stepper",
    "VectorField",
    "bistable",
    "build_grid",
    "initial_density",
    "monostable",
    "regularity_ratio",
    "run",
    "solve_velocity",
]
