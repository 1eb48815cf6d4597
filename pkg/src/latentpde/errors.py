"""Exception hierarchy shared across the package.

Error categories map onto CLI exit codes: usage and file-format problems
exit 2, numerical failures exit 1 (see harness.cli).
"""


class LatentPDEError(Exception):
    """Base class for all package errors."""


class DomainMismatchError(LatentPDEError):
    """Two grids disagree on extents, origin, or nesting."""


class DimensionError(LatentPDEError):
    """Array lengths or tensor shapes are incompatible."""


class InvalidSpecError(LatentPDEError):
    """A problem or configuration description violates its invariants."""


class FormatError(LatentPDEError):
    """A binary or text artifact on disk is malformed.

    ``offset`` is the byte offset of the first inconsistency when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (offset {offset})")
        self.offset = offset


class DivergenceError(LatentPDEError):
    """An iterative solver's residual grew past the divergence guard."""


class TrainingDivergedError(LatentPDEError):
    """A training loss became non-finite."""


class NumericalBlowupError(LatentPDEError):
    """A latent iterate became non-finite.

    ``iteration`` names the fixed-point iteration that produced it.
    """

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class DatasetError(LatentPDEError):
    """A dataset is incomplete, inconsistent, or ungeneratable."""


class InvalidStateError(LatentPDEError):
    """An object was used outside its valid lifecycle (e.g. a stale tape)."""


class UsageError(LatentPDEError):
    """Bad command-line arguments or an unusable input file."""
