"""Hybrid latent-space PDE solver.

Compresses source/geometry/boundary conditions and solution fields with
convolutional autoencoders, then solves new cases by fixed-point iteration
in latent space, seeded from an interpolated coarse-grid solve. Reference
finite-difference solvers (steady heat conduction and Boussinesq natural
convection in stream-function--vorticity form) provide both training data
and ground truth.
"""

from latentpde.errors import (
    DatasetError,
    DimensionError,
    DivergenceError,
    DomainMismatchError,
    FormatError,
    InvalidSpecError,
    InvalidStateError,
    LatentPDEError,
    NumericalBlowupError,
    TrainingDivergedError,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "DatasetError",
    "DimensionError",
    "DivergenceError",
    "DomainMismatchError",
    "FormatError",
    "InvalidSpecError",
    "InvalidStateError",
    "LatentPDEError",
    "NumericalBlowupError",
    "TrainingDivergedError",
    "UsageError",
    "__version__",
]
