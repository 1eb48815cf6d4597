"""Autoencoder training loops.

Condition autoencoders minimize plain reconstruction MSE on normalized
fields. The solution autoencoder adds a physics term:

    loss = MSE(u, u_hat) + lambda * mean((r(u_hat) / scale)^2 over interior)

where r is the temperature-equation stencil residual of the decoded,
denormalized reconstruction and scale is the problem's source norm. The
residual rows are linear in the temperature field, so the exact
gradient is the stencil adjoint applied to the masked residual; it is
injected into the decoder output gradient alongside the MSE term. A
config switch extends the penalty to all equation residuals, where each
equation is differentiated with respect to its own field about the
decoded state (coefficients held fixed, Picard style).

Both loops split off a validation set, shuffle deterministically from
cfg.seed, keep the best-validation weights, and record per-epoch
train/val losses. Condition latents are computed once up front from the
frozen condition autoencoders.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..errors import (
    DatasetError,
    DimensionError,
    InvalidSpecError,
    TrainingDivergedError,
)
from ..fields import FieldStats, Grid, ScalarField
from ..neural import ModelParams, adam_step, backward, forward, init_adam
from ..solver import boussinesq_systems, heat_scale
from ..solver.heat import HeatProblem, assemble_heat, residual_arrays
from .models import (
    ConditionAE,
    LatentVector,
    SolutionAE,
    build_condition_ae,
    build_solution_ae,
    encode_condition,
)

MIN_SAMPLES = 20

RESIDUAL_MODES = ("temperature", "all")

LR_SCHEDULES = ("constant", "cosine")

# cosine floor as a fraction of the initial rate
LR_FLOOR_FRACTION = 0.01


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    pde_loss_weight: float = 0.01
    seed: int = 0
    validation_fraction: float = 0.1
    residual_mode: str = "temperature"
    channels: Tuple[int, ...] = (8, 16, 32)
    lr_schedule: str = "constant"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidSpecError("epochs and batch_size must be >= 1")
        if self.lr <= 0.0:
            raise InvalidSpecError(f"lr must be positive, got {self.lr}")
        if self.pde_loss_weight < 0.0:
            raise InvalidSpecError(f"pde_loss_weight must be >= 0, got {self.pde_loss_weight}")
        if not 0.0 < self.validation_fraction <= 0.5:
            raise InvalidSpecError(
                f"validation_fraction must be in (0, 0.5], got {self.validation_fraction}"
            )
        if self.residual_mode not in RESIDUAL_MODES:
            raise InvalidSpecError(f"residual_mode must be one of {RESIDUAL_MODES}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise InvalidSpecError(f"lr_schedule must be one of {LR_SCHEDULES}")


def epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for one epoch: constant, or a half-cosine ramp from
    cfg.lr down to LR_FLOOR_FRACTION * cfg.lr across the run."""
    if cfg.lr_schedule == "constant":
        return cfg.lr
    floor = LR_FLOOR_FRACTION * cfg.lr
    span = max(cfg.epochs - 1, 1)
    return floor + 0.5 * (cfg.lr - floor) * (1.0 + np.cos(np.pi * epoch / span))


@dataclass(frozen=True)
class ConditionSet:
    """Per-sample conditions: the raw fields (one per role) and the
    problem whose stencil defines the residual penalty."""

    fields: Mapping[str, ScalarField]
    heat: HeatProblem
    boussinesq: Optional[object] = None  # BoussinesqProblem when mode "all" applies


def stencil_adjoint(c: dict, w: np.ndarray) -> np.ndarray:
    """Transpose product of the 5-point residual rows.

    Row i reads aP_i*x_i - sum_d a_d,i*x_{i+d} - b_i, so the gradient of
    sum_i w_i*r_i with respect to x scatters each -a_d back to the
    neighbor the row referenced.
    """
    out = c["aP"] * w
    out[:, :-1] -= c["aW"][:, 1:] * w[:, 1:]
    out[:, 1:] -= c["aE"][:, :-1] * w[:, :-1]
    out[:-1, :] -= c["aS"][1:, :] * w[1:, :]
    out[1:, :] -= c["aN"][:-1, :] * w[:-1, :]
    return out


# ---------------------------------------------------------------------------
# shared loop machinery


def _copy_weights(weights):
    return [None if p is None else {k: v.copy() for k, v in p.items()} for p in weights]


def _with_weights(model: ModelParams, weights) -> ModelParams:
    return ModelParams(model.layers, weights, model.input_dims, model.init_seed)


def _check_uniform_grids(fields: Sequence[ScalarField]) -> Grid:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid.shape != g.shape or not f.grid.same_extents(g):
            raise DatasetError("dataset mixes grids; all samples must share one grid")
    return g


def _split(n: int, frac: float, rng: np.random.Generator):
    order = rng.permutation(n)
    n_val = max(1, int(round(frac * n)))
    if n - n_val < 1:
        raise DatasetError(f"validation fraction {frac} leaves no training samples")
    return order[n_val:], order[:n_val]


def _batches(idx: np.ndarray, batch_size: int, rng: np.random.Generator):
    order = idx[rng.permutation(idx.size)]
    return [order[i : i + batch_size] for i in range(0, order.size, batch_size)]


class _Trainer:
    """Adam over an encoder/decoder pair with best-validation tracking."""

    def __init__(self, enc: ModelParams, dec: ModelParams, lr: float):
        self.enc = enc
        self.dec = dec
        self.enc_state = init_adam(enc, lr)
        self.dec_state = init_adam(dec, lr)
        self.best_val = np.inf
        self.best = (_copy_weights(enc.weights), _copy_weights(dec.weights))

    def step(self, enc_grads, dec_grads):
        self.enc, self.enc_state = adam_step(self.enc, enc_grads, self.enc_state)
        self.dec, self.dec_state = adam_step(self.dec, dec_grads, self.dec_state)

    def set_lr(self, lr: float):
        self.enc_state.lr = lr
        self.dec_state.lr = lr

    def note_validation(self, val: float):
        if val < self.best_val:
            self.best_val = val
            self.best = (_copy_weights(self.enc.weights), _copy_weights(self.dec.weights))

    def best_models(self):
        return _with_weights(self.enc, self.best[0]), _with_weights(self.dec, self.best[1])


# ---------------------------------------------------------------------------
# condition autoencoder


def train_condition_ae(
    fields: Sequence[ScalarField],
    latent_dim: int,
    cfg: TrainConfig,
    role: str = "source",
) -> Tuple[ConditionAE, List[dict]]:
    """MSE training on normalized fields; pde_loss_weight is ignored
    here because condition fields carry no equation to penalize."""
    if len(fields) < MIN_SAMPLES:
        raise DatasetError(f"need at least {MIN_SAMPLES} samples, got {len(fields)}")
    grid = _check_uniform_grids(fields)
    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = _split(len(fields), cfg.validation_fraction, rng)

    raw = np.stack([f.values for f in fields])
    stats = FieldStats.from_values(raw[train_idx])
    data = ((raw - stats.mean) / stats.std)[:, None, :, :]

    ae = build_condition_ae(grid, latent_dim, role, cfg.seed + 1, stats, cfg.channels)
    tr = _Trainer(ae.encoder, ae.decoder, cfg.lr)
    log: List[dict] = []

    def recon(enc, dec, x):
        z, tape_e = forward(enc, x)
        y, tape_d = forward(dec, z)
        return z, y, tape_e, tape_d

    for epoch in range(cfg.epochs):
        tr.set_lr(epoch_lr(cfg, epoch))
        for batch in _batches(train_idx, cfg.batch_size, rng):
            x = data[batch]
            _, y, tape_e, tape_d = recon(tr.enc, tr.dec, x)
            diff = y - x
            loss = float(np.mean(diff * diff))
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}")
            gy = (2.0 / diff.size) * diff
            dec_grads, gz = backward(tr.dec, tape_d, gy)
            enc_grads, _ = backward(tr.enc, tape_e, gz)
            tr.step(enc_grads, dec_grads)

        # epoch metrics at the post-update weights, so the train column
        # tracks one parameter state instead of a mid-epoch mixture
        xt = data[train_idx]
        _, yt, _, _ = recon(tr.enc, tr.dec, xt)
        train_loss = float(np.mean((yt - xt) ** 2))
        xv = data[val_idx]
        _, yv, _, _ = recon(tr.enc, tr.dec, xv)
        val = float(np.mean((yv - xv) ** 2))
        if not np.isfinite(val) or not np.isfinite(train_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        tr.note_validation(val)
        log.append({"epoch": epoch, "train": train_loss, "val": val})

    enc, dec = tr.best_models()
    return ConditionAE(enc, dec, latent_dim, stats, grid, role), log


# ---------------------------------------------------------------------------
# solution autoencoder


def _condition_matrix(
    condition_aes: Mapping[str, ConditionAE],
    condition_sets: Sequence[ConditionSet],
    cond_roles: Tuple[str, ...],
) -> np.ndarray:
    """Frozen condition latents, one row per sample, roles concatenated."""
    rows = []
    for cs in condition_sets:
        parts = []
        for role in cond_roles:
            if role not in cs.fields:
                raise InvalidSpecError(f"condition set is missing the {role!r} field")
            parts.append(encode_condition(condition_aes[role], cs.fields[role]).values)
        rows.append(np.concatenate(parts))
    return np.stack(rows)


@dataclass
class _PdeTerm:
    """Per-sample residual context for the physics penalty."""

    coeffs: dict  # temperature stencil (mode "temperature")
    scale: float
    interior: np.ndarray  # bool mask of penalized rows
    fluid_interior: np.ndarray
    boussinesq: Optional[object]


def _pde_contexts(condition_sets: Sequence[ConditionSet], mode: str) -> List[_PdeTerm]:
    out = []
    for cs in condition_sets:
        g = cs.heat.grid
        interior = np.zeros(g.shape, dtype=bool)
        interior[1:-1, 1:-1] = True
        fluid_interior = interior
        bq = None
        if mode == "all":
            bq = cs.boussinesq
            if bq is None:
                raise InvalidSpecError(
                    'residual_mode "all" needs a flow problem in every condition set'
                )
            if bq.solid is not None:
                fluid_interior = interior & ~(bq.solid.values > 0.5)
        out.append(
            _PdeTerm(assemble_heat(cs.heat), heat_scale(cs.heat), interior, fluid_interior, bq)
        )
    return out


def _residual_penalty(ctx: _PdeTerm, decoded: List[ScalarField], var_names) -> Tuple[float, dict]:
    """Penalty value and its gradient per variable (physical units)."""

    def one_term(c, x, mask, scale):
        r = residual_arrays(x, c) * mask
        n = int(mask.sum())
        val = float(np.sum(r * r)) / (n * scale * scale)
        grad = (2.0 / (n * scale * scale)) * stencil_adjoint(c, r)
        return val, grad

    by_var = {name: fld.values for name, fld in zip(var_names, decoded)}
    if ctx.boussinesq is None:
        val, grad = one_term(ctx.coeffs, by_var["T"], ctx.interior, ctx.scale)
        return val, {"T": grad}

    from ..fields import ScalarField as _SF

    g = ctx.boussinesq.grid
    sys = boussinesq_systems(
        _SF(g, by_var["psi"]), _SF(g, by_var["omega"]), _SF(g, by_var["T"]), ctx.boussinesq
    )
    total, grads = 0.0, {}
    for name, key in (("T", "T"), ("omega", "omega"), ("psi", "psi")):
        c = sys[key]
        mask = ctx.interior if name == "T" else ctx.fluid_interior
        scale = ctx.scale if name == "T" else max(float(np.linalg.norm(c["b"])), 1.0)
        val, grad = one_term(c, by_var[name], mask, scale)
        total += val
        grads[name] = grad
    return total, grads


def _solution_pass(ae_vars, tr, x, cond, lam, ctxs, stats, var_names, train: bool):
    """One forward (and optionally backward) pass over a batch.

    Returns (total loss, mse, pde term, gradients or None). The PDE
    gradient enters the decoder output alongside the MSE gradient; the
    condition block of the decoder input gradient is discarded because
    the condition networks are frozen.
    """
    latent_dim = ae_vars["latent_dim"]
    z, tape_e = forward(tr.enc, x)
    zin = np.concatenate([z[:, :, 0, 0], cond], axis=1)[:, :, None, None]
    y, tape_d = forward(tr.dec, zin)
    diff = y - x
    mse = float(np.mean(diff * diff))
    gy = (2.0 / diff.size) * diff

    pde = 0.0
    if lam > 0.0:
        bsz = x.shape[0]
        for s in range(bsz):
            decoded = [
                ScalarField(ae_vars["grid"], y[s, i] * stats[i].std + stats[i].mean)
                for i in range(len(var_names))
            ]
            val, grads = _residual_penalty(ctxs[s], decoded, var_names)
            pde += val / bsz
            if train:
                for i, name in enumerate(var_names):
                    if name in grads:
                        gy[s, i] += (lam / bsz) * stats[i].std * grads[name]

    total = mse + lam * pde
    if not train:
        return total, mse, pde, None
    dec_grads, gz_in = backward(tr.dec, tape_d, gy)
    gz = gz_in[:, :latent_dim]
    enc_grads, _ = backward(tr.enc, tape_e, gz)
    return total, mse, pde, (enc_grads, dec_grads)


def train_solution_ae(
    solutions: Sequence[Sequence[ScalarField]],
    condition_aes: Mapping[str, ConditionAE],
    condition_sets: Sequence[ConditionSet],
    latent_dim: int,
    cfg: TrainConfig,
    var_names: Sequence[str] = ("psi", "omega", "T"),
) -> Tuple[SolutionAE, List[dict]]:
    if len(solutions) < MIN_SAMPLES:
        raise DatasetError(f"need at least {MIN_SAMPLES} samples, got {len(solutions)}")
    if len(condition_sets) != len(solutions):
        raise DatasetError(
            f"{len(solutions)} solutions but {len(condition_sets)} condition sets"
        )
    var_names = tuple(var_names)
    n_vars = len(var_names)
    for sol in solutions:
        if len(sol) != n_vars:
            raise DatasetError(f"every sample must carry {n_vars} fields, got {len(sol)}")
    grid = _check_uniform_grids([f for sol in solutions for f in sol])
    if cfg.pde_loss_weight > 0.0 and "T" not in var_names:
        raise InvalidSpecError("the residual penalty needs a temperature variable")
    if cfg.pde_loss_weight > 0.0 and cfg.residual_mode == "all" and set(var_names) != {
        "psi",
        "omega",
        "T",
    }:
        raise InvalidSpecError('residual_mode "all" needs variables (psi, omega, T)')

    cond_roles = tuple(sorted(condition_aes))
    cond_dims = {r: condition_aes[r].latent_dim for r in cond_roles}
    cond_matrix = _condition_matrix(condition_aes, condition_sets, cond_roles)

    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = _split(len(solutions), cfg.validation_fraction, rng)

    raw = np.stack([[f.values for f in sol] for sol in solutions])  # (N, V, ny, nx)
    stats = tuple(FieldStats.from_values(raw[train_idx, i]) for i in range(n_vars))
    data = np.stack([(raw[:, i] - st.mean) / st.std for i, st in enumerate(stats)], axis=1)

    ctxs = (
        _pde_contexts(condition_sets, cfg.residual_mode) if cfg.pde_loss_weight > 0.0 else None
    )

    ae = build_solution_ae(grid, var_names, latent_dim, cond_dims, cfg.seed + 1, stats, cfg.channels)
    tr = _Trainer(ae.encoder, ae.decoder, cfg.lr)
    ae_vars = {"latent_dim": latent_dim, "grid": grid}
    log: List[dict] = []

    lam = cfg.pde_loss_weight if ctxs is not None else 0.0

    for epoch in range(cfg.epochs):
        tr.set_lr(epoch_lr(cfg, epoch))
        for batch in _batches(train_idx, cfg.batch_size, rng):
            bctx = [ctxs[i] for i in batch] if ctxs is not None else None
            total, _, _, grads = _solution_pass(
                ae_vars, tr, data[batch], cond_matrix[batch], lam, bctx, stats,
                var_names, train=True,
            )
            if not np.isfinite(total):
                raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}")
            tr.step(*grads)

        # epoch metrics at the post-update weights (see train_condition_ae)
        tctx = [ctxs[i] for i in train_idx] if ctxs is not None else None
        train_loss, _, _, _ = _solution_pass(
            ae_vars, tr, data[train_idx], cond_matrix[train_idx], lam, tctx, stats,
            var_names, train=False,
        )
        vctx = [ctxs[i] for i in val_idx] if ctxs is not None else None
        val, val_mse, val_pde, _ = _solution_pass(
            ae_vars, tr, data[val_idx], cond_matrix[val_idx], lam, vctx, stats,
            var_names, train=False,
        )
        if not np.isfinite(val) or not np.isfinite(train_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        tr.note_validation(val)
        log.append(
            {
                "epoch": epoch,
                "train": train_loss,
                "val": val,
                "val_mse": val_mse,
                "val_pde": val_pde,
            }
        )

    enc, dec = tr.best_models()
    ranges = tuple(
        (float(raw[train_idx, i].min()), float(raw[train_idx, i].max()))
        for i in range(n_vars)
    )
    trained = SolutionAE(
        enc, dec, latent_dim, n_vars, var_names, stats, cond_dims, cond_roles, grid, ranges
    )
    return trained, log


# ---------------------------------------------------------------------------
# evaluation helpers


def condition_recon_mse(ae: ConditionAE, fields: Sequence[ScalarField]) -> float:
    """Mean reconstruction MSE in normalized units."""
    x = np.stack([(f.values - ae.stats.mean) / ae.stats.std for f in fields])[:, None]
    z, _ = forward(ae.encoder, x)
    y, _ = forward(ae.decoder, z)
    return float(np.mean((y - x) ** 2))


def solution_recon_mse(
    ae: SolutionAE,
    solutions: Sequence[Sequence[ScalarField]],
    condition_aes: Mapping[str, ConditionAE],
    condition_sets: Sequence[ConditionSet],
) -> List[float]:
    """Per-variable reconstruction MSE in normalized units."""
    cond = _condition_matrix(condition_aes, condition_sets, ae.cond_roles)
    x = np.stack(
        [
            [(f.values - st.mean) / st.std for f, st in zip(sol, ae.stats)]
            for sol in solutions
        ]
    )
    z, _ = forward(ae.encoder, x)
    zin = np.concatenate([z[:, :, 0, 0], cond], axis=1)[:, :, None, None]
    y, _ = forward(ae.decoder, zin)
    return [float(np.mean((y[:, i] - x[:, i]) ** 2)) for i in range(ae.n_vars)]


def decoded_temperature_residuals(
    ae: SolutionAE,
    solutions: Sequence[Sequence[ScalarField]],
    condition_aes: Mapping[str, ConditionAE],
    condition_sets: Sequence[ConditionSet],
) -> Tuple[List[float], List[float]]:
    """Interior temperature-residual norms of (decoded, ground-truth)
    fields, one pair per sample."""
    cond = _condition_matrix(condition_aes, condition_sets, ae.cond_roles)
    t_idx = ae.var_names.index("T")
    decoded_norms, truth_norms = [], []
    for sol, cs, crow in zip(solutions, condition_sets, cond):
        x = np.stack([(f.values - st.mean) / st.std for f, st in zip(sol, ae.stats)])[None]
        z, _ = forward(ae.encoder, x)
        zin = np.concatenate([z[0, :, 0, 0], crow])[None, :, None, None]
        y, _ = forward(ae.decoder, zin)
        t_hat = y[0, t_idx] * ae.stats[t_idx].std + ae.stats[t_idx].mean
        c = assemble_heat(cs.heat)
        mask = np.zeros(cs.heat.grid.shape, dtype=bool)
        mask[1:-1, 1:-1] = True
        decoded_norms.append(float(np.linalg.norm(residual_arrays(t_hat, c)[mask])))
        truth_norms.append(
            float(np.linalg.norm(residual_arrays(sol[t_idx].values, c)[mask]))
        )
    return decoded_norms, truth_norms
