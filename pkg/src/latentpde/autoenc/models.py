"""Autoencoder model containers and encode/decode operations.

Two families share the same convolutional skeleton. Condition
autoencoders compress a single scalar field (heat source, geometry
level-set, boundary encoding) to a latent vector and back. The solution
autoencoder compresses the stacked solution variables, and its decoder
additionally receives the condition latents concatenated after the
solution latent, which is how the reconstruction is conditioned.

Fields are z-score normalized per variable before encoding and
denormalized after decoding; the stats are part of the model. Hidden
activations are tanh; the latent and the reconstruction layers are
linear, since z-scored targets routinely exceed [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..errors import DimensionError, InvalidSpecError
from ..fields import FieldStats, Grid, ScalarField
from ..neural import (
    Activation,
    Conv,
    Dense,
    Flatten,
    ModelParams,
    Reshape,
    TransposedConv,
    build_model,
    predict,
)

CONDITION_ROLES = ("geometry", "source", "boundary")

# latent sizes follow fixed compression ratios: input values / latent length
SOURCE_COMPRESSION = 12.0
SOLUTION_COMPRESSION = 64.0


@dataclass(frozen=True)
class LatentVector:
    """A latent code plus the role it encodes."""

    values: np.ndarray
    role: str

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if not np.isfinite(v).all():
            raise InvalidSpecError(f"non-finite latent vector for role {self.role!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size


def source_latent_dim(grid: Grid) -> int:
    return max(1, round(grid.num_nodes / SOURCE_COMPRESSION))


def solution_latent_dim(grid: Grid, n_vars: int) -> int:
    return max(1, round(n_vars * grid.num_nodes / SOLUTION_COMPRESSION))


def _down_shapes(hw: Tuple[int, int], levels: int) -> List[Tuple[int, int]]:
    shapes = [hw]
    h, w = hw
    for _ in range(levels):
        h, w = -(-h // 2), -(-w // 2)
        shapes.append((h, w))
    return shapes


def encoder_layers(
    latent_dim: int, channels: Sequence[int] = (8, 16, 32), activation: str = "tanh"
) -> list:
    layers = []
    for c in channels:
        layers += [Conv(c, 3, 2), Activation(activation)]
    layers += [Flatten(), Dense(latent_dim)]
    return layers


def decoder_layers(
    out_channels: int,
    hw: Tuple[int, int],
    channels: Sequence[int] = (8, 16, 32),
    activation: str = "tanh",
) -> list:
    """Mirror of encoder_layers; transposed convs pin the exact shapes
    on the way back up so odd extents invert correctly. The output head
    is linear either way: normalized targets are unbounded, so a
    squashing head would put them out of reach."""
    shapes = _down_shapes(hw, len(channels))
    bottom = shapes[-1]
    layers = [
        Dense(channels[-1] * bottom[0] * bottom[1]),
        Activation(activation),
        Reshape((channels[-1], bottom[0], bottom[1])),
    ]
    for i, c in enumerate(reversed(channels[:-1])):
        layers += [TransposedConv(c, 3, 2, out_hw=shapes[len(channels) - 1 - i]), Activation(activation)]
    layers += [TransposedConv(out_channels, 3, 2, out_hw=shapes[0])]
    return layers


@dataclass
class ConditionAE:
    """Encoder/decoder pair for one condition field."""

    encoder: ModelParams
    decoder: ModelParams
    latent_dim: int
    stats: FieldStats
    grid: Grid
    role: str

    def __post_init__(self):
        if self.role not in CONDITION_ROLES and self.role != "solution":
            raise InvalidSpecError(f"unknown condition role {self.role!r}")
        if self.encoder.output_dims != (self.latent_dim, 1, 1):
            raise InvalidSpecError(
                f"encoder produces {self.encoder.output_dims}, want ({self.latent_dim}, 1, 1)"
            )
        if self.decoder.input_dims != (self.latent_dim, 1, 1):
            raise InvalidSpecError(
                f"decoder consumes {self.decoder.input_dims}, want ({self.latent_dim}, 1, 1)"
            )
        if self.decoder.output_dims != (1, self.grid.ny, self.grid.nx):
            raise InvalidSpecError(
                f"decoder produces {self.decoder.output_dims}, "
                f"want (1, {self.grid.ny}, {self.grid.nx})"
            )

    @property
    def compression_ratio(self) -> float:
        return self.grid.num_nodes / self.latent_dim


@dataclass
class SolutionAE:
    """Conditioned autoencoder over the stacked solution variables.

    The decoder input is the solution latent followed by the condition
    latents in ``cond_roles`` order; its width is therefore
    latent_dim + sum(cond_dims.values()).
    """

    encoder: ModelParams
    decoder: ModelParams
    latent_dim: int
    n_vars: int
    var_names: Tuple[str, ...]
    stats: Tuple[FieldStats, ...]
    cond_dims: Dict[str, int]
    cond_roles: Tuple[str, ...]
    grid: Grid
    # Per-variable (lo, hi) over the training split, physical units. Used to
    # clamp approximate initial fields before encoding; None disables that.
    ranges: Optional[Tuple[Tuple[float, float], ...]] = None

    def __post_init__(self):
        if len(self.var_names) != self.n_vars or len(self.stats) != self.n_vars:
            raise InvalidSpecError("var_names and stats must have one entry per variable")
        if self.ranges is not None:
            rng = tuple((float(lo), float(hi)) for lo, hi in self.ranges)
            if len(rng) != self.n_vars or any(lo > hi for lo, hi in rng):
                raise InvalidSpecError("ranges needs one ordered (lo, hi) pair per variable")
            object.__setattr__(self, "ranges", rng)
        if tuple(sorted(self.cond_roles)) != tuple(sorted(self.cond_dims)):
            raise InvalidSpecError("cond_roles must list exactly the keys of cond_dims")
        want_in = self.latent_dim + sum(self.cond_dims.values())
        if self.encoder.output_dims != (self.latent_dim, 1, 1):
            raise InvalidSpecError(
                f"encoder produces {self.encoder.output_dims}, want ({self.latent_dim}, 1, 1)"
            )
        if self.decoder.input_dims != (want_in, 1, 1):
            raise InvalidSpecError(
                f"decoder consumes {self.decoder.input_dims}, want ({want_in}, 1, 1)"
            )
        if self.decoder.output_dims != (self.n_vars, self.grid.ny, self.grid.nx):
            raise InvalidSpecError(
                f"decoder produces {self.decoder.output_dims}, "
                f"want ({self.n_vars}, {self.grid.ny}, {self.grid.nx})"
            )

    @property
    def compression_ratio(self) -> float:
        return self.n_vars * self.grid.num_nodes / self.latent_dim


def build_condition_ae(
    grid: Grid,
    latent_dim: int,
    role: str,
    seed: int,
    stats: Optional[FieldStats] = None,
    channels: Sequence[int] = (8, 16, 32),
    activation: str = "tanh",
) -> ConditionAE:
    """Untrained condition AE with freshly initialized networks."""
    hw = (grid.ny, grid.nx)
    enc = build_model(encoder_layers(latent_dim, channels, activation), (1, *hw), seed)
    dec = build_model(decoder_layers(1, hw, channels, activation), (latent_dim, 1, 1), seed + 1)
    return ConditionAE(enc, dec, latent_dim, stats or FieldStats(0.0, 1.0), grid, role)


def build_solution_ae(
    grid: Grid,
    var_names: Sequence[str],
    latent_dim: int,
    cond_dims: Mapping[str, int],
    seed: int,
    stats: Optional[Sequence[FieldStats]] = None,
    channels: Sequence[int] = (8, 16, 32),
    activation: str = "tanh",
) -> SolutionAE:
    hw = (grid.ny, grid.nx)
    n_vars = len(var_names)
    cond_roles = tuple(sorted(cond_dims))
    enc = build_model(encoder_layers(latent_dim, channels, activation), (n_vars, *hw), seed)
    in_dim = latent_dim + sum(cond_dims.values())
    dec = build_model(decoder_layers(n_vars, hw, channels, activation), (in_dim, 1, 1), seed + 1)
    st = tuple(stats) if stats is not None else tuple(FieldStats(0.0, 1.0) for _ in var_names)
    return SolutionAE(
        enc, dec, latent_dim, n_vars, tuple(var_names), st, dict(cond_dims), cond_roles, grid
    )


def _check_grid(fld: ScalarField, grid: Grid, what: str):
    if fld.grid.shape != grid.shape or not fld.grid.same_extents(grid):
        raise DimensionError(
            f"{what}: field grid {fld.grid.nx}x{fld.grid.ny} does not match "
            f"training grid {grid.nx}x{grid.ny}"
        )


def encode_condition(ae: ConditionAE, fld: ScalarField) -> LatentVector:
    _check_grid(fld, ae.grid, "encode_condition")
    x = ((fld.values - ae.stats.mean) / ae.stats.std)[None, None, :, :]
    z = predict(ae.encoder, x)
    return LatentVector(z.reshape(-1), ae.role)


def decode_condition(ae: ConditionAE, latent: LatentVector) -> ScalarField:
    if len(latent) != ae.latent_dim:
        raise DimensionError(f"latent length {len(latent)} != {ae.latent_dim}")
    if latent.role != ae.role:
        raise InvalidSpecError(f"latent role {latent.role!r} does not match AE role {ae.role!r}")
    y = predict(ae.decoder, latent.values.reshape(1, -1, 1, 1))
    return ScalarField(ae.grid, y[0, 0] * ae.stats.std + ae.stats.mean)


def normalize_solution(ae: SolutionAE, fields: Sequence[ScalarField]) -> np.ndarray:
    """Stack to (n_vars, ny, nx) in z-scored units."""
    if len(fields) != ae.n_vars:
        raise DimensionError(f"expected {ae.n_vars} fields, got {len(fields)}")
    out = np.empty((ae.n_vars, ae.grid.ny, ae.grid.nx))
    for i, (fld, st) in enumerate(zip(fields, ae.stats)):
        _check_grid(fld, ae.grid, "encode_solution")
        out[i] = (fld.values - st.mean) / st.std
    return out


def denormalize_solution(ae: SolutionAE, stacked: np.ndarray) -> List[ScalarField]:
    return [
        ScalarField(ae.grid, stacked[i] * st.std + st.mean) for i, st in enumerate(ae.stats)
    ]


def encode_solution(ae: SolutionAE, fields: Sequence[ScalarField]) -> LatentVector:
    x = normalize_solution(ae, fields)[None]
    z = predict(ae.encoder, x)
    return LatentVector(z.reshape(-1), "solution")


def assemble_decoder_input(
    ae: SolutionAE, latent_values: np.ndarray, cond: Mapping[str, LatentVector]
) -> np.ndarray:
    """Concatenate solution latent and condition latents in cond_roles
    order; shared by decode_solution and the hybrid iteration."""
    for role in ae.cond_roles:
        if role not in cond:
            raise InvalidSpecError(f"missing condition latent for role {role!r}")
        if len(cond[role]) != ae.cond_dims[role]:
            raise DimensionError(
                f"condition latent {role!r} has length {len(cond[role])}, "
                f"want {ae.cond_dims[role]}"
            )
    v = np.asarray(latent_values, dtype=np.float64).reshape(-1)
    if v.size != ae.latent_dim:
        raise DimensionError(f"solution latent length {v.size} != {ae.latent_dim}")
    return np.concatenate([v] + [cond[r].values for r in ae.cond_roles])


def decode_solution(
    ae: SolutionAE, latent: LatentVector, cond: Mapping[str, LatentVector]
) -> List[ScalarField]:
    zin = assemble_decoder_input(ae, latent.values, cond)
    y = predict(ae.decoder, zin.reshape(1, -1, 1, 1))
    return denormalize_solution(ae, y[0])
