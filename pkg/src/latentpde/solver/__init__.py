"""Finite-difference reference solvers and coarse-grid initialization."""

from latentpde.solver.boussinesq import (
    BoussinesqProblem,
    boussinesq_residuals,
    boussinesq_systems,
    solve_boussinesq,
    velocity_from_stream,
)
from latentpde.solver.heat import (
    HeatProblem,
    SolveReport,
    heat_residual,
    heat_scale,
    heat_system,
    solve_heat,
)
from latentpde.solver.initialize import coarse_initialize, coarsen_field

__all__ = [
    "BoussinesqProblem",
    "HeatProblem",
    "SolveReport",
    "boussinesq_residuals",
    "boussinesq_systems",
    "coarse_initialize",
    "coarsen_field",
    "heat_residual",
    "heat_scale",
    "heat_system",
    "solve_boussinesq",
    "solve_heat",
    "velocity_from_stream",
]
