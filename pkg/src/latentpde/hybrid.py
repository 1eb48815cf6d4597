"""Fixed-point solver in latent space.

The iteration decodes a solution latent (conditioned on the frozen
condition latents), re-encodes the decoded fields, and blends the result
back into the iterate:

    eta_{k+1} = eta_k + damping * (E(D(eta_k)) - eta_k)

For a perfect autoencoder the map E(D(.)) is the identity and any latent
is a fixed point; for a trained one the iteration walks the iterate onto
the manifold of encodable solutions. Convergence is declared when the
latent update norm drops below ``tol``. The update is computed in the
incremental form above (not ``(1-a)*eta + a*eta_hat``) so the step norm
is exactly ``damping * ||eta_hat - eta||`` in floating point, which the
report invariants rely on.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Tuple, Union

import numpy as np

from .autoenc import (
    LatentVector,
    ModelBundle,
    SolutionAE,
    assemble_decoder_input,
    denormalize_solution,
    encode_condition,
    encode_solution,
)
from .conditions import boundary_to_field
from .errors import DimensionError, InvalidSpecError, NumericalBlowupError
from .fields import ScalarField, constant_field
from .neural import predict
from .solver import BoussinesqProblem, HeatProblem, coarse_initialize


@dataclass(frozen=True)
class CoarseGridInit:
    """Start from an under-resolved solve prolongated to the fine grid."""

    n: int = 16
    iters: int = 200


@dataclass(frozen=True)
class ZeroFieldInit:
    """Start from all-zero solution fields."""


@dataclass(frozen=True)
class GivenFieldsInit:
    """Start from caller-supplied fields, one per solution variable."""

    fields: Tuple[ScalarField, ...]

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))


InitMode = Union[CoarseGridInit, ZeroFieldInit, GivenFieldsInit]


@dataclass(frozen=True)
class HybridConfig:
    tol: float = 1e-6
    max_iter: int = 500
    damping: float = 1.0
    init: InitMode = CoarseGridInit()

    def __post_init__(self):
        if not self.tol > 0.0:
            raise InvalidSpecError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise InvalidSpecError(f"max_iter must be at least 1, got {self.max_iter}")
        if not 0.0 < self.damping <= 1.0:
            raise InvalidSpecError(f"damping must lie in (0, 1], got {self.damping}")
        if not isinstance(self.init, (CoarseGridInit, ZeroFieldInit, GivenFieldsInit)):
            raise InvalidSpecError(f"unknown init mode {self.init!r}")


@dataclass(frozen=True)
class ConvergenceReport:
    """Per-solve iteration record.

    ``latent_deltas[k]`` is ``||E(D(eta_k)) - eta_k||_2`` for iteration
    k+1, so ``len(latent_deltas) == iterations`` always, and when
    ``converged`` the last delta is the one that beat the tolerance.
    ``wall_time_init`` covers constructing the initial fields (the coarse
    solve and prolongation; effectively zero for the other init modes)
    and is included in ``wall_time_total``.
    """

    iterations: int
    latent_deltas: Tuple[float, ...]
    converged: bool
    wall_time_total: float
    wall_time_init: float

    def __post_init__(self):
        object.__setattr__(self, "latent_deltas", tuple(float(d) for d in self.latent_deltas))
        if len(self.latent_deltas) != self.iterations:
            raise InvalidSpecError(
                f"{self.iterations} iterations but {len(self.latent_deltas)} deltas"
            )
        if not 0.0 <= self.wall_time_init <= self.wall_time_total:
            raise InvalidSpecError("wall times must satisfy 0 <= init <= total")
        if self.converged and self.iterations == 0:
            raise InvalidSpecError("a converged report needs at least one iteration")


def latent_step(
    ae: SolutionAE, eta: LatentVector, cond: Mapping[str, LatentVector]
) -> Tuple[LatentVector, List[ScalarField]]:
    """One decode/re-encode round trip: eta_hat = E(D(eta)).

    Returns the re-encoded latent and the decoded physical fields. The
    decoded stack is fed straight back to the encoder in normalized
    units; denormalizing and re-normalizing would cancel exactly up to
    rounding. The encoder is the same instance used by encode_solution,
    so the initial encoding and every re-encoding share one code path.
    """
    zin = assemble_decoder_input(ae, eta.values, cond)
    y = predict(ae.decoder, zin.reshape(1, -1, 1, 1))[0]
    if not np.all(np.isfinite(y)):
        raise NumericalBlowupError("decoder output is non-finite")
    z = predict(ae.encoder, y[None]).reshape(-1)
    if not np.all(np.isfinite(z)):
        raise NumericalBlowupError("re-encoded latent is non-finite")
    return LatentVector(z, "solution"), denormalize_solution(ae, y)


def condition_fields_from_problem(problem) -> Dict[str, ScalarField]:
    """Render the three condition fields any problem carries implicitly.

    source    the volumetric heat source, as given
    boundary  the temperature boundary conditions painted on the edge ring
    geometry  a 0/1 solid-occupancy mask: the explicit solid mask for a
              convection problem, and the nodes whose conductivity differs
              from the fluid value 1 for a pure conduction problem (the
              only trace solids leave there)

    The hybrid solver and the training data pipeline both call this, so
    a model trained on generated samples sees exactly the encoding the
    solver reproduces at query time.
    """
    if isinstance(problem, BoussinesqProblem):
        heat = problem.heat
        if problem.solid is not None:
            geometry = problem.solid
        else:
            geometry = constant_field(heat.grid, 0.0)
    elif isinstance(problem, HeatProblem):
        heat = problem
        geometry = ScalarField(
            heat.grid, np.where(heat.conductivity.values != 1.0, 1.0, 0.0)
        )
    else:
        raise InvalidSpecError(f"unsupported problem type {type(problem).__name__}")
    return {
        "geometry": geometry,
        "source": heat.source,
        "boundary": boundary_to_field(heat.bc, "T", heat.grid),
    }


def _initial_fields(problem, ae: SolutionAE, init: InitMode) -> List[ScalarField]:
    if isinstance(init, CoarseGridInit):
        fields = coarse_initialize(problem, problem.grid, init.n, init.iters)
    elif isinstance(init, ZeroFieldInit):
        fields = [constant_field(problem.grid, 0.0) for _ in range(ae.n_vars)]
    else:
        for f in init.fields:
            if f.grid.shape != problem.grid.shape or not f.grid.same_extents(problem.grid):
                raise DimensionError("given initial fields must live on the problem grid")
        fields = list(init.fields)
    if len(fields) != ae.n_vars:
        raise DimensionError(
            f"init produced {len(fields)} fields, model expects {ae.n_vars} "
            f"({', '.join(ae.var_names)})"
        )
    return fields


def _clamp_to_training_range(ae: SolutionAE, fields: List[ScalarField]) -> List[ScalarField]:
    # Interpolated or guessed initial fields can overshoot the value range
    # the encoder ever saw in training; past it the network extrapolates
    # freely and the first iterate starts from garbage. Clipping to the
    # per-variable training range is a no-op for in-range fields.
    if ae.ranges is None:
        return fields
    return [
        ScalarField(f.grid, np.clip(f.values, lo, hi))
        for f, (lo, hi) in zip(fields, ae.ranges)
    ]


def hybrid_solve(
    problem, bundle: ModelBundle, cfg: HybridConfig = HybridConfig()
) -> Tuple[List[ScalarField], ConvergenceReport]:
    """Solve ``problem`` by fixed-point iteration in latent space.

    Returns the decoded solution fields (in the model's variable order)
    and a ConvergenceReport. Hitting ``max_iter`` is not an error: the
    report says ``converged=False`` and the fields decode the final
    iterate. A non-finite iterate raises NumericalBlowupError naming the
    iteration that produced it.
    """
    t_start = time.perf_counter()
    ae = bundle.solution
    if ae.grid.shape != problem.grid.shape or not ae.grid.same_extents(problem.grid):
        raise DimensionError(
            f"model trained on {ae.grid.nx}x{ae.grid.ny}, "
            f"problem is {problem.grid.nx}x{problem.grid.ny}"
        )

    cond_fields = condition_fields_from_problem(problem)
    cond: Dict[str, LatentVector] = {}
    for role in ae.cond_roles:
        if role not in bundle.condition_aes:
            raise InvalidSpecError(f"bundle has no condition autoencoder for role {role!r}")
        cond[role] = encode_condition(bundle.condition_aes[role], cond_fields[role])

    t_init = time.perf_counter()
    init_fields = _initial_fields(problem, ae, cfg.init)
    wall_time_init = time.perf_counter() - t_init

    eta = encode_solution(ae, _clamp_to_training_range(ae, init_fields))

    deltas: List[float] = []
    converged = False
    for k in range(1, cfg.max_iter + 1):
        try:
            eta_hat, _ = latent_step(ae, eta, cond)
        except NumericalBlowupError as exc:
            raise NumericalBlowupError(f"iteration {k}: {exc}", iteration=k) from None
        step = eta_hat.values - eta.values
        delta = float(np.linalg.norm(step))
        deltas.append(delta)
        if not math.isfinite(delta):
            raise NumericalBlowupError(
                f"iteration {k}: latent update norm is non-finite", iteration=k
            )
        new_values = eta.values + cfg.damping * step
        if not np.all(np.isfinite(new_values)):
            raise NumericalBlowupError(
                f"iteration {k}: blended latent is non-finite", iteration=k
            )
        eta = LatentVector(new_values, "solution")
        if delta < cfg.tol:
            converged = True
            break

    # The loop's decoded fields belong to the previous iterate; decode the
    # latent actually kept (for damping 1 the converged case makes these
    # equal, since the last blend is the re-encoded latent itself).
    _, fields = latent_step(ae, eta, cond)

    report = ConvergenceReport(
        iterations=len(deltas),
        latent_deltas=tuple(deltas),
        converged=converged,
        wall_time_total=time.perf_counter() - t_start,
        wall_time_init=wall_time_init,
    )
    return fields, report


def convergence_trace_export(report: ConvergenceReport, path) -> None:
    """Write the per-iteration latent deltas as CSV.

    Columns are ``iteration`` (1-based) and ``delta``, printed with 17
    significant digits so reading the file back reproduces the float64
    values bit for bit. A report with zero iterations yields just the
    header line.
    """
    lines = ["iteration,delta"]
    for i, d in enumerate(report.latent_deltas, start=1):
        lines.append(f"{i},{d:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")
