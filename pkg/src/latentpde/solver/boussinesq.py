"""Steady natural convection in stream-function--vorticity form.

Three coupled fields on one grid:

    lap(psi) = -omega                    (kinematics)
    u*dw/dx + v*dw/dy = Pr*lap(omega) + Ra*Pr*dT/dx   (vorticity transport)
    u*dT/dx + v*dT/dy = div(k grad T) + q             (energy)

with u = dpsi/dy, v = -dpsi/dx. Buoyancy acts along +y for a temperature
gradient along x, which is the standard nondimensional Boussinesq form.

Advection is first-order upwind (keeps every sub-system an M-matrix),
diffusion is the 5-point stencil, and the outer coupling is damped
Picard over three red-black SOR sub-solves. Walls are no-slip for the
fluid (psi = 0, wall vorticity from Thom's formula) and follow the
BoundarySpec for temperature.

Solid obstacles (an optional 0/1 mask) take psi = omega = 0 and zero
advection velocity, so their temperature obeys pure conduction with the
solid conductivity; their surfaces are effectively free-slip, which is
accepted at this scale since the same solver provides both training
data and ground truth.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from latentpde.errors import DimensionError, DivergenceError, InvalidSpecError
from latentpde.fields import ScalarField
from latentpde.solver.heat import (
    HeatProblem,
    SolveReport,
    _red_black_masks,
    assemble_heat,
    heat_scale,
    residual_arrays,
    solve_heat,
    sor_sweeps,
)


@dataclass(frozen=True)
class BoussinesqProblem:
    """Natural-convection problem wrapping a conduction problem.

    ``solid`` is an optional 0/1 mask of solid nodes; None means an
    all-fluid cavity.
    """

    heat: HeatProblem
    rayleigh: float
    prandtl: float
    solid: ScalarField | None = None

    def __post_init__(self):
        if not 0.0 < self.rayleigh <= 1e6:
            raise InvalidSpecError(
                f"rayleigh {self.rayleigh} outside the supported laminar range (0, 1e6]"
            )
        if self.prandtl <= 0:
            raise InvalidSpecError(f"prandtl must be positive, got {self.prandtl}")
        if self.solid is not None:
            if self.solid.grid.shape != self.heat.grid.shape:
                raise DimensionError("solid mask grid does not match the problem grid")
            vals = set(np.unique(self.solid.values))
            if not vals <= {0.0, 1.0}:
                raise InvalidSpecError("solid mask must be a 0/1 field")

    @property
    def grid(self):
        return self.heat.grid


def velocity_from_stream(psi: ScalarField) -> tuple[ScalarField, ScalarField]:
    """u = dpsi/dy, v = -dpsi/dx; central differences, one-sided at edges."""
    g = psi.grid
    u = np.gradient(psi.values, g.hy, axis=0, edge_order=1)
    v = -np.gradient(psi.values, g.hx, axis=1, edge_order=1)
    return ScalarField(g, u), ScalarField(g, v)


def _masks(problem: BoussinesqProblem) -> dict:
    g = problem.grid
    solid = (
        problem.solid.values > 0.5
        if problem.solid is not None
        else np.zeros(g.shape, dtype=bool)
    )
    boundary = np.zeros(g.shape, dtype=bool)
    boundary[0, :] = boundary[-1, :] = True
    boundary[:, 0] = boundary[:, -1] = True
    fluid_interior = ~boundary & ~solid
    return {"solid": solid, "boundary": boundary, "fluid_interior": fluid_interior}


def _base_coeffs(shape) -> dict:
    return {
        "aP": np.ones(shape),
        "aW": np.zeros(shape),
        "aE": np.zeros(shape),
        "aS": np.zeros(shape),
        "aN": np.zeros(shape),
        "b": np.zeros(shape),
    }


def _add_upwind_advection(c: dict, u: np.ndarray, v: np.ndarray, where: np.ndarray, hx: float, hy: float):
    """First-order upwind u*d/dx + v*d/dy contributions on masked rows."""
    up = np.maximum(u, 0.0) / hx
    um = np.maximum(-u, 0.0) / hx
    vp = np.maximum(v, 0.0) / hy
    vm = np.maximum(-v, 0.0) / hy
    c["aW"] += np.where(where, up, 0.0)
    c["aE"] += np.where(where, um, 0.0)
    c["aS"] += np.where(where, vp, 0.0)
    c["aN"] += np.where(where, vm, 0.0)
    c["aP"] += np.where(where, up + um + vp + vm, 0.0)


def _assemble_temperature(problem: BoussinesqProblem, u: np.ndarray, v: np.ndarray) -> dict:
    # Conduction rows everywhere (solids keep their conductivity), plus
    # upwind advection on fluid interior rows only.
    c = assemble_heat(problem.heat)
    m = _masks(problem)
    g = problem.grid
    _add_upwind_advection(c, u, v, m["fluid_interior"], g.hx, g.hy)
    return c


def _assemble_vorticity(problem: BoussinesqProblem, u: np.ndarray, v: np.ndarray, T: np.ndarray, psi: np.ndarray) -> dict:
    g = problem.grid
    m = _masks(problem)
    pr = problem.prandtl
    hx2, hy2 = g.hx * g.hx, g.hy * g.hy
    c = _base_coeffs(g.shape)
    fi = m["fluid_interior"]

    c["aW"][fi] = pr / hx2
    c["aE"][fi] = pr / hx2
    c["aS"][fi] = pr / hy2
    c["aN"][fi] = pr / hy2
    c["aP"][fi] = 2.0 * pr / hx2 + 2.0 * pr / hy2
    _add_upwind_advection(c, u, v, fi, g.hx, g.hy)

    # Buoyancy: Ra*Pr*dT/dx, central difference on interior columns.
    dTdx = np.zeros(g.shape)
    dTdx[:, 1:-1] = (T[:, 2:] - T[:, :-2]) / (2.0 * g.hx)
    c["b"][fi] = problem.rayleigh * pr * dTdx[fi]

    # Walls: Thom's formula from the adjacent stream-function value
    # (psi = 0 on the wall). Horizontal walls painted last win corners.
    thom = np.zeros(g.shape)
    thom[:, 0] = -2.0 * psi[:, 1] / hx2
    thom[:, -1] = -2.0 * psi[:, -2] / hx2
    thom[0, :] = -2.0 * psi[1, :] / hy2
    thom[-1, :] = -2.0 * psi[-2, :] / hy2
    c["b"][m["boundary"]] = thom[m["boundary"]]
    # Solid rows (and any solid node on the wall): omega = 0.
    c["b"][m["solid"]] = 0.0
    return c


def _assemble_stream(problem: BoussinesqProblem, omega: np.ndarray) -> dict:
    # -lap(psi) = omega in the fluid; psi = 0 on walls and in solids.
    g = problem.grid
    m = _masks(problem)
    hx2, hy2 = g.hx * g.hx, g.hy * g.hy
    c = _base_coeffs(g.shape)
    fi = m["fluid_interior"]
    c["aW"][fi] = 1.0 / hx2
    c["aE"][fi] = 1.0 / hx2
    c["aS"][fi] = 1.0 / hy2
    c["aN"][fi] = 1.0 / hy2
    c["aP"][fi] = 2.0 / hx2 + 2.0 / hy2
    c["b"][fi] = omega[fi]
    return c


def boussinesq_systems(
    psi: ScalarField, omega: ScalarField, T: ScalarField, problem: BoussinesqProblem
) -> dict:
    """Stencil coefficients of the three equations at the given state.

    Returns {"T", "omega", "psi"} coefficient dicts in the assemble_heat
    layout plus the node partition under "masks". The advecting
    velocities come from psi, so each dict is the Picard linearization
    of its equation about the state: residual_arrays(field, dict)
    reproduces boussinesq_residuals row for row.
    """
    m = _masks(problem)
    u_f, v_f = velocity_from_stream(psi)
    fluid = ~m["solid"]
    u = np.where(fluid, u_f.values, 0.0)
    v = np.where(fluid, v_f.values, 0.0)
    return {
        "T": _assemble_temperature(problem, u, v),
        "omega": _assemble_vorticity(problem, u, v, T.values, psi.values),
        "psi": _assemble_stream(problem, omega.values),
        "masks": m,
    }


def _relative_residual(x: np.ndarray, c: dict, fallback_scale: float = 1.0) -> float:
    r = float(np.linalg.norm(residual_arrays(x, c)))
    scale = float(np.linalg.norm(c["b"]))
    if scale < 1e-14:
        scale = fallback_scale
    return r / scale


def boussinesq_residuals(
    psi: ScalarField, omega: ScalarField, T: ScalarField, problem: BoussinesqProblem
) -> dict:
    """Relative residuals of the three equations for given fields."""
    u_f, v_f = velocity_from_stream(psi)
    m = _masks(problem)
    fluid = ~m["solid"]
    u = np.where(fluid, u_f.values, 0.0)
    v = np.where(fluid, v_f.values, 0.0)
    cT = _assemble_temperature(problem, u, v)
    cw = _assemble_vorticity(problem, u, v, T.values, psi.values)
    cp = _assemble_stream(problem, omega.values)
    rT = float(np.linalg.norm(residual_arrays(T.values, cT))) / heat_scale(problem.heat)
    return {
        "T": rT,
        "omega": _relative_residual(omega.values, cw),
        "psi": _relative_residual(psi.values, cp),
    }


def solve_boussinesq(
    problem: BoussinesqProblem,
    tol: float = 1e-6,
    max_iter: int = 300,
    relax: float = 1.7,
    damping: float = 0.7,
    wall_relax: float = 0.3,
    inner_sweeps: tuple[int, int, int] = (40, 40, 80),
) -> tuple[ScalarField, ScalarField, ScalarField, SolveReport]:
    """Damped Picard over SOR sub-solves until the joint residual drops
    below tol.

    ``wall_relax`` under-relaxes the Thom wall-vorticity update; the
    psi -> omega_wall -> psi feedback loop amplifies otherwise and the
    full-field damping alone cannot contain it. The joint residual is
    the max of the three equations' relative residuals, re-assembled
    from the updated fields (with unblended wall rows) at the end of
    each outer iteration. max_iter caps outer iterations; hitting the
    cap returns converged=False rather than raising, so fixed-budget
    coarse solves stay usable.
    """
    if tol <= 0 or max_iter < 1:
        raise InvalidSpecError(f"need tol > 0 and max_iter >= 1, got {tol}, {max_iter}")
    if not 0.0 < damping <= 1.0:
        raise InvalidSpecError(f"damping must lie in (0, 1], got {damping}")
    if not 0.0 < wall_relax <= 1.0:
        raise InvalidSpecError(f"wall_relax must lie in (0, 1], got {wall_relax}")
    start = time.perf_counter()
    g = problem.grid
    m = _masks(problem)
    fluid = ~m["solid"]
    rb = _red_black_masks(g.shape)

    # Conduction-only preheat gives the Picard loop a consistent start
    # (and makes the quiescent case converge immediately).
    T_field, _ = solve_heat(problem.heat, tol=max(tol, 1e-10), max_iter=5000, relax=relax)
    T = T_field.values.copy()
    psi = np.zeros(g.shape)
    omega = np.zeros(g.shape)

    n_T, n_w, n_p = inner_sweeps
    scale_T = heat_scale(problem.heat)
    joint0 = None
    joint = np.inf
    outer = 0
    converged = False
    while outer < max_iter:
        outer += 1
        u_f, v_f = velocity_from_stream(ScalarField(g, psi))
        u = np.where(fluid, u_f.values, 0.0)
        v = np.where(fluid, v_f.values, 0.0)

        cT = _assemble_temperature(problem, u, v)
        T_new = T.copy()
        sor_sweeps(T_new, cT, relax, n_T, rb)
        T += damping * (T_new - T)

        cw = _assemble_vorticity(problem, u, v, T, psi)
        # Under-relax the wall rows toward the previous vorticity.
        bnd = m["boundary"]
        cw["b"][bnd] = (1.0 - wall_relax) * omega[bnd] + wall_relax * cw["b"][bnd]
        w_new = omega.copy()
        sor_sweeps(w_new, cw, relax, n_w, rb)
        omega += damping * (w_new - omega)

        cp = _assemble_stream(problem, omega)
        p_new = psi.copy()
        sor_sweeps(p_new, cp, relax, n_p, rb)
        psi += damping * (p_new - psi)

        # Joint residual against systems rebuilt from the updated fields.
        u_f, v_f = velocity_from_stream(ScalarField(g, psi))
        u = np.where(fluid, u_f.values, 0.0)
        v = np.where(fluid, v_f.values, 0.0)
        cT = _assemble_temperature(problem, u, v)
        cw = _assemble_vorticity(problem, u, v, T, psi)
        cp = _assemble_stream(problem, omega)
        rT = float(np.linalg.norm(residual_arrays(T, cT))) / scale_T
        rw = _relative_residual(omega, cw)
        rp = _relative_residual(psi, cp)
        joint = max(rT, rw, rp)

        if not np.isfinite(joint):
            raise DivergenceError(f"boussinesq solve produced non-finite residual at outer {outer}")
        if joint0 is None:
            joint0 = max(joint, tol)
        elif joint > 1e6 * joint0:
            raise DivergenceError(
                f"boussinesq solve diverged at outer {outer}: residual {joint:g} from {joint0:g}"
            )
        if joint <= tol:
            converged = True
            break

    report = SolveReport(
        iterations=outer,
        final_residual=float(joint),
        wall_time=time.perf_counter() - start,
        converged=converged,
    )
    return (
        ScalarField(g, psi),
        ScalarField(g, omega),
        ScalarField(g, T),
        report,
    )
