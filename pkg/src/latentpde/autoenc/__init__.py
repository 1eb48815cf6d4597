"""Condition and solution autoencoders with PDE-augmented training."""

from .bundle import ModelBundle, load_bundle, save_bundle
from .models import (
    CONDITION_ROLES,
    ConditionAE,
    LatentVector,
    SolutionAE,
    assemble_decoder_input,
    build_condition_ae,
    build_solution_ae,
    decode_condition,
    decode_solution,
    denormalize_solution,
    encode_condition,
    encode_solution,
    normalize_solution,
    solution_latent_dim,
    source_latent_dim,
)
from .training import (
    ConditionSet,
    TrainConfig,
    condition_recon_mse,
    decoded_temperature_residuals,
    solution_recon_mse,
    stencil_adjoint,
    train_condition_ae,
    train_solution_ae,
)

__all__ = [
    "CONDITION_ROLES",
    "ConditionAE",
    "ConditionSet",
    "LatentVector",
    "SolutionAE",
    "TrainConfig",
    "assemble_decoder_input",
    "build_condition_ae",
    "build_solution_ae",
    "condition_recon_mse",
    "decode_condition",
    "decode_solution",
    "decoded_temperature_residuals",
    "denormalize_solution",
    "encode_condition",
    "encode_solution",
    "normalize_solution",
    "ModelBundle",
    "load_bundle",
    "save_bundle",
    "solution_latent_dim",
    "solution_recon_mse",
    "source_latent_dim",
    "stencil_adjoint",
    "train_condition_ae",
    "train_solution_ae",
]
