"""Steady heat conduction: -div(k grad T) = q on a node-centered grid.

Discretization is the standard 5-point stencil with harmonic-mean face
conductivities, so fluxes stay continuous across the conductivity jumps
at solid boundaries. The linear system is solved by red-black SOR.

Row conventions (shared by the residual, the SOR solver, and the sparse
export, so their residuals agree exactly):

* interior node:  aP*T_P - sum(a_nb*T_nb) = q, with a_nb = k_face/h^2
* Dirichlet node: T_P = value
* Neumann node:   (T_P - T_inner)/h_n = g, where g is the prescribed
  outward normal derivative (first-order one-sided flux)

Corner ownership: Neumann edges are painted first and Dirichlet edges
second, each in the order (left, right, bottom, top), so a Dirichlet
condition always wins a corner and later edges win ties.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from latentpde.conditions import EDGES, BoundarySpec
from latentpde.errors import DimensionError, DivergenceError, InvalidSpecError
from latentpde.fields import Grid, ScalarField

# Residual growth past this factor of the initial residual aborts a solve.
_DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class HeatProblem:
    """Conduction problem: grid, conductivity field, volumetric source, BCs."""

    grid: Grid
    conductivity: ScalarField
    source: ScalarField
    bc: BoundarySpec

    def __post_init__(self):
        if self.conductivity.grid.shape != self.grid.shape or self.source.grid.shape != self.grid.shape:
            raise DimensionError("conductivity/source grids do not match the problem grid")
        if np.any(self.conductivity.values <= 0.0):
            raise InvalidSpecError("conductivity must be strictly positive everywhere")
        if "T" not in self.bc.conditions:
            raise InvalidSpecError("boundary spec lacks temperature conditions")


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    wall_time: float
    converged: bool


def _edge_slices(grid: Grid) -> dict:
    return {
        "left": (slice(None), 0),
        "right": (slice(None), grid.nx - 1),
        "bottom": (0, slice(None)),
        "top": (grid.ny - 1, slice(None)),
    }


def _paint_owners(grid: Grid, bc: BoundarySpec, var: str) -> np.ndarray:
    """Assign each boundary node to one edge; 0 marks interior nodes.

    Codes are 1..4 in EDGES order. Neumann edges paint before Dirichlet
    edges so Dirichlet wins every contested corner.
    """
    owner = np.zeros(grid.shape, dtype=np.int8)
    slices = _edge_slices(grid)
    for pass_kind in ("neumann", "dirichlet"):
        for code, edge in enumerate(EDGES, start=1):
            if bc.edge(var, edge).kind == pass_kind:
                owner[slices[edge]] = code
    return owner


def assemble_heat(problem: HeatProblem) -> dict:
    """Build per-node equation arrays aP*T_P = sum(a_nb*T_nb) + b.

    Returns the five coefficient arrays, the right-hand side, and the
    boundary ownership map. Neighbor coefficients are zero wherever the
    neighbor does not exist or is not referenced.
    """
    g = problem.grid
    k = problem.conductivity.values
    q = problem.source.values
    hx2 = g.hx * g.hx
    hy2 = g.hy * g.hy

    aW = np.zeros(g.shape)
    aE = np.zeros(g.shape)
    aS = np.zeros(g.shape)
    aN = np.zeros(g.shape)
    aP = np.zeros(g.shape)
    b = np.zeros(g.shape)

    # Harmonic-mean face conductivities on interior nodes.
    inner = (slice(1, -1), slice(1, -1))
    kP = k[1:-1, 1:-1]
    kE = 2.0 * kP * k[1:-1, 2:] / (kP + k[1:-1, 2:])
    kW = 2.0 * kP * k[1:-1, :-2] / (kP + k[1:-1, :-2])
    kN = 2.0 * kP * k[2:, 1:-1] / (kP + k[2:, 1:-1])
    kS = 2.0 * kP * k[:-2, 1:-1] / (kP + k[:-2, 1:-1])
    aE[inner] = kE / hx2
    aW[inner] = kW / hx2
    aN[inner] = kN / hy2
    aS[inner] = kS / hy2
    aP[inner] = aE[inner] + aW[inner] + aN[inner] + aS[inner]
    b[inner] = q[1:-1, 1:-1]

    owner = _paint_owners(g, problem.bc, "T")
    # The inward neighbor coefficient and normal spacing per edge.
    inward = {"left": (aE, g.hx), "right": (aW, g.hx), "bottom": (aN, g.hy), "top": (aS, g.hy)}
    for code, edge in enumerate(EDGES, start=1):
        sel = owner == code
        if not sel.any():
            continue
        cond = problem.bc.edge("T", edge)
        if cond.kind == "dirichlet":
            aP[sel] = 1.0
            b[sel] = cond.value
        else:
            nb, h = inward[edge]
            aP[sel] = 1.0 / h
            nb[sel] = 1.0 / h
            b[sel] = cond.value
    return {"aP": aP, "aW": aW, "aE": aE, "aS": aS, "aN": aN, "b": b, "owner": owner}


def _neighbor_sum(T: np.ndarray, c: dict) -> np.ndarray:
    s = np.zeros_like(T)
    s[:, 1:] += c["aW"][:, 1:] * T[:, :-1]
    s[:, :-1] += c["aE"][:, :-1] * T[:, 1:]
    s[1:, :] += c["aS"][1:, :] * T[:-1, :]
    s[:-1, :] += c["aN"][:-1, :] * T[1:, :]
    return s


def residual_arrays(T: np.ndarray, c: dict) -> np.ndarray:
    """Row residual aP*T - sum(a_nb*T_nb) - b for assembled coefficients."""
    return c["aP"] * T - _neighbor_sum(T, c) - c["b"]


def heat_residual(T: ScalarField, problem: HeatProblem) -> ScalarField:
    """Residual field: conduction residual inside, BC residuals on edges."""
    if T.grid.shape != problem.grid.shape:
        raise DimensionError(
            f"temperature grid {T.grid.shape} does not match problem grid {problem.grid.shape}"
        )
    c = assemble_heat(problem)
    return ScalarField(problem.grid, residual_arrays(T.values, c))


def heat_scale(problem: HeatProblem) -> float:
    """Residual normalization: source norm, falling back to the BC data
    norm for source-free problems, then to 1."""
    c = assemble_heat(problem)
    q_norm = float(np.linalg.norm(problem.source.values[1:-1, 1:-1]))
    if q_norm >= 1e-14:
        return q_norm
    b_norm = float(np.linalg.norm(c["b"]))
    return b_norm if b_norm >= 1e-14 else 1.0


def heat_system(problem: HeatProblem) -> tuple[sp.csr_matrix, np.ndarray]:
    """Sparse form (A, b) with A @ T.flat - b equal to the residual rows.

    Assembled independently from index triplets; used by the
    PDE-augmented training loss for exact adjoint products.
    """
    c = assemble_heat(problem)
    g = problem.grid
    n = g.num_nodes
    idx = np.arange(n).reshape(g.shape)
    rows = [idx.reshape(-1)]
    cols = [idx.reshape(-1)]
    vals = [c["aP"].reshape(-1)]
    # (coefficient array, row slice it applies to, column index offset)
    couplings = [
        (c["aW"], (slice(None), slice(1, None)), -1),
        (c["aE"], (slice(None), slice(0, -1)), +1),
        (c["aS"], (slice(1, None), slice(None)), -g.nx),
        (c["aN"], (slice(0, -1), slice(None)), +g.nx),
    ]
    for arr, sl, off in couplings:
        r = idx[sl].reshape(-1)
        rows.append(r)
        cols.append(r + off)
        vals.append(-arr[sl].reshape(-1))
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    return A, c["b"].reshape(-1).copy()


def _red_black_masks(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    J, I = np.indices(shape)
    red = (I + J) % 2 == 0
    return red, ~red


def sor_sweeps(T: np.ndarray, c: dict, relax: float, n_sweeps: int, masks=None) -> None:
    """Run red-black SOR sweeps in place on T.

    Every coupling in the 5-point-plus-boundary pattern connects nodes
    of opposite colors, so each half sweep is a valid Gauss-Seidel
    ordering.
    """
    if masks is None:
        masks = _red_black_masks(T.shape)
    aP = c["aP"]
    b = c["b"]
    for _ in range(n_sweeps):
        for mask in masks:
            s = _neighbor_sum(T, c)
            np.copyto(T, (1.0 - relax) * T + relax * (s + b) / aP, where=mask)


def initial_guess(problem: HeatProblem, c: dict) -> np.ndarray:
    """Mean of the Dirichlet values everywhere, exact on Dirichlet nodes."""
    dirichlet_vals = [
        problem.bc.edge("T", e).value
        for e in EDGES
        if problem.bc.edge("T", e).kind == "dirichlet"
    ]
    T = np.full(problem.grid.shape, float(np.mean(dirichlet_vals)) if dirichlet_vals else 0.0)
    owner = c["owner"]
    for code, edge in enumerate(EDGES, start=1):
        cond = problem.bc.edge("T", edge)
        if cond.kind == "dirichlet":
            T[owner == code] = cond.value
    return T


def solve_heat(
    problem: HeatProblem,
    tol: float = 1e-7,
    max_iter: int = 50000,
    relax: float = 1.7,
) -> tuple[ScalarField, SolveReport]:
    """Red-black SOR solve to a relative residual below tol.

    The reported residual is ||r||_2 / heat_scale(problem), checked
    after every sweep. Residual growth past 1e6 times the initial value
    raises DivergenceError.
    """
    if tol <= 0 or max_iter < 1:
        raise InvalidSpecError(f"need tol > 0 and max_iter >= 1, got {tol}, {max_iter}")
    start = time.perf_counter()
    c = assemble_heat(problem)
    scale = heat_scale(problem)
    masks = _red_black_masks(problem.grid.shape)
    T = initial_guess(problem, c)

    rel0 = float(np.linalg.norm(residual_arrays(T, c))) / scale
    rel = rel0
    sweeps = 0
    converged = rel <= tol
    while not converged and sweeps < max_iter:
        sor_sweeps(T, c, relax, 1, masks)
        sweeps += 1
        rel = float(np.linalg.norm(residual_arrays(T, c))) / scale
        if not np.isfinite(rel) or rel > _DIVERGENCE_FACTOR * max(rel0, tol):
            raise DivergenceError(
                f"heat solve diverged at sweep {sweeps}: residual {rel:g} from {rel0:g}"
            )
        converged = rel <= tol
    report = SolveReport(
        iterations=sweeps,
        final_residual=rel,
        wall_time=time.perf_counter() - start,
        converged=converged,
    )
    return ScalarField(problem.grid, T), report
