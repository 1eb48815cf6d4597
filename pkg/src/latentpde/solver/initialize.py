"""Coarse-grid initialization: restate, under-solve, prolongate.

The hybrid inference loop starts from a cheap approximate solution: the
problem is restated on a small grid, run for a fixed iteration budget
with no convergence requirement, and the result is interpolated onto
the fine grid.
"""

from __future__ import annotations

import numpy as np

from latentpde.errors import InvalidSpecError
from latentpde.fields import Grid, ScalarField, prolongate, sample_bilinear
from latentpde.solver.boussinesq import BoussinesqProblem, solve_boussinesq
from latentpde.solver.heat import HeatProblem, solve_heat


def coarsen_field(fld: ScalarField, coarse_grid: Grid) -> ScalarField:
    """Resample a field onto a coarser grid of the same domain.

    Bilinear sampling at the coarse nodes; works for non-nested
    resolutions (e.g. 64 -> 16 nodes). Coincident nodes are reproduced
    exactly.
    """
    X, Y = coarse_grid.coords()
    return ScalarField(coarse_grid, sample_bilinear(fld, X, Y))


def _coarsen_heat(problem: HeatProblem, coarse_grid: Grid) -> HeatProblem:
    return HeatProblem(
        grid=coarse_grid,
        conductivity=coarsen_field(problem.conductivity, coarse_grid),
        source=coarsen_field(problem.source, coarse_grid),
        bc=problem.bc,
    )


def _coarsen_boussinesq(problem: BoussinesqProblem, coarse_grid: Grid) -> BoussinesqProblem:
    solid = None
    if problem.solid is not None:
        # Resampling smears the mask; re-binarize at the half level.
        smeared = coarsen_field(problem.solid, coarse_grid)
        solid = ScalarField(coarse_grid, np.where(smeared.values >= 0.5, 1.0, 0.0))
    return BoussinesqProblem(
        heat=_coarsen_heat(problem.heat, coarse_grid),
        rayleigh=problem.rayleigh,
        prandtl=problem.prandtl,
        solid=solid,
    )


def coarse_initialize(
    problem,
    fine_grid: Grid,
    coarse_n: int = 16,
    coarse_iters: int = 200,
) -> list[ScalarField]:
    """Approximate solution fields on fine_grid from an under-resolved solve.

    Restates ``problem`` (HeatProblem or BoussinesqProblem) on a
    coarse_n x coarse_n grid, runs at most coarse_iters iterations (no
    convergence requirement), and prolongates every solution variable.
    Returns [T] for heat problems and [psi, omega, T] for Boussinesq.
    """
    if coarse_n < 4:
        raise InvalidSpecError(f"coarse_n must be at least 4, got {coarse_n}")
    if coarse_iters < 1:
        raise InvalidSpecError(f"coarse_iters must be at least 1, got {coarse_iters}")
    grid = problem.grid
    coarse_grid = Grid(
        nx=min(coarse_n, fine_grid.nx),
        ny=min(coarse_n, fine_grid.ny),
        lx=grid.lx,
        ly=grid.ly,
        origin=grid.origin,
    )
    if isinstance(problem, BoussinesqProblem):
        cp = _coarsen_boussinesq(problem, coarse_grid)
        psi, omega, T, _ = solve_boussinesq(cp, tol=1e-10, max_iter=coarse_iters)
        coarse_fields = [psi, omega, T]
    elif isinstance(problem, HeatProblem):
        cp = _coarsen_heat(problem, coarse_grid)
        T, _ = solve_heat(cp, tol=1e-10, max_iter=coarse_iters)
        coarse_fields = [T]
    else:
        raise InvalidSpecError(f"unsupported problem type {type(problem).__name__}")
    return [prolongate(f, fine_grid) for f in coarse_fields]
