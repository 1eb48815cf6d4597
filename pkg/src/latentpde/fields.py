"""Grids, scalar fields, norms, and coarse/fine transfer operators.

Conventions used throughout the package:

* Grids are uniform and node-centered: an ``nx x ny`` grid has nodes at
  ``x0 + i*hx`` with ``hx = lx/(nx - 1)``, so the first and last node lie
  on the domain boundary.
* Field values are stored as a ``(ny, nx)`` float64 array; flattened
  C-order gives the row-major layout ``index = j*nx + i`` used by the
  binary file format.
* All public operations are pure and deterministic, and no NaN or Inf
  ever escapes one.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from latentpde.errors import (
    DimensionError,
    DomainMismatchError,
    FormatError,
    InvalidSpecError,
)

_MAGIC = b"LPDF"
_HEADER = struct.Struct("<4sIII")  # magic, nx, ny, reserved

# Extents that differ by less than this (relative) count as the same domain.
_EXTENT_RTOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform node-centered 2D grid.

    Parameters
    ----------
    nx, ny : int
        Node counts per axis, at least 2 each.
    lx, ly : float
        Physical extents in meters.
    origin : (float, float)
        Coordinates of the lower-left node.
    """

    nx: int
    ny: int
    lx: float
    ly: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise InvalidSpecError(f"grid needs at least 2 nodes per axis, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise InvalidSpecError(f"grid extents must be positive, got {self.lx}x{self.ly}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def hx(self) -> float:
        return self.lx / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.ly / (self.ny - 1)

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape of a field on this grid, ``(ny, nx)``."""
        return (self.ny, self.nx)

    @property
    def num_nodes(self) -> int:
        return self.nx * self.ny

    def xs(self) -> np.ndarray:
        return self.origin[0] + self.hx * np.arange(self.nx)

    def ys(self) -> np.ndarray:
        return self.origin[1] + self.hy * np.arange(self.ny)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinate arrays ``(X, Y)``, each of shape ``(ny, nx)``."""
        return np.meshgrid(self.xs(), self.ys(), indexing="xy")

    def same_extents(self, other: "Grid") -> bool:
        tol = _EXTENT_RTOL
        return (
            abs(self.lx - other.lx) <= tol * max(1.0, abs(self.lx))
            and abs(self.ly - other.ly) <= tol * max(1.0, abs(self.ly))
            and abs(self.origin[0] - other.origin[0]) <= tol * max(1.0, abs(self.lx))
            and abs(self.origin[1] - other.origin[1]) <= tol * max(1.0, abs(self.ly))
        )


@dataclass(frozen=True)
class ScalarField:
    """Immutable scalar field: a grid plus one float64 value per node."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        # Copy unconditionally: the field owns its buffer, so freezing it
        # below can never flip a caller's working array to read-only.
        v = np.array(self.values, dtype=np.float64, order="C", copy=True)
        if v.shape == (self.grid.num_nodes,):
            v = v.reshape(self.grid.shape)
        if v.shape != self.grid.shape:
            raise DimensionError(
                f"field values shaped {v.shape}, grid expects {self.grid.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise InvalidSpecError("field values contain NaN or Inf")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def flat(self) -> np.ndarray:
        """Row-major 1D view, ``index = j*nx + i``."""
        return self.values.reshape(-1)

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)


@dataclass(frozen=True)
class FieldStats:
    """Mean/std pair for field normalization. The std is floored at 1e-12
    so constant fields normalize to zero instead of dividing by zero."""

    mean: float
    std: float

    def __post_init__(self):
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "std", max(float(self.std), 1e-12))

    @classmethod
    def from_values(cls, values: np.ndarray) -> "FieldStats":
        v = np.asarray(values, dtype=np.float64)
        return cls(mean=float(v.mean()), std=float(v.std()))


def constant_field(grid: Grid, value: float) -> ScalarField:
    return ScalarField(grid, np.full(grid.shape, float(value)))


def sample_bilinear(fld: ScalarField, x, y) -> np.ndarray:
    """Evaluate the bilinear interpolant of ``fld`` at points ``(x, y)``.

    Points are clamped to the grid's bounding box, which absorbs roundoff
    at the far edges. Exact for any function a + b*x + c*y + d*x*y
    sampled at the nodes.
    """
    g = fld.grid
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    fx = np.clip((x - g.origin[0]) / g.hx, 0.0, g.nx - 1.0)
    fy = np.clip((y - g.origin[1]) / g.hy, 0.0, g.ny - 1.0)
    # Snap points that are a rounding error away from a node onto it, so
    # sampling at node coordinates reproduces nodal values bit-exactly.
    fx = np.where(np.abs(fx - np.round(fx)) < 1e-9, np.round(fx), fx)
    fy = np.where(np.abs(fy - np.round(fy)) < 1e-9, np.round(fy), fy)
    # Anchor to the lower-left node of the containing cell; the far edge
    # lands in the last cell with local coordinate 1.
    i0 = np.minimum(fx.astype(np.int64), g.nx - 2)
    j0 = np.minimum(fy.astype(np.int64), g.ny - 2)
    tx = fx - i0
    ty = fy - j0
    v = fld.values
    v00 = v[j0, i0]
    v01 = v[j0, i0 + 1]
    v10 = v[j0 + 1, i0]
    v11 = v[j0 + 1, i0 + 1]
    return (1.0 - ty) * ((1.0 - tx) * v00 + tx * v01) + ty * ((1.0 - tx) * v10 + tx * v11)


def prolongate(coarse: ScalarField, fine_grid: Grid) -> ScalarField:
    """Bilinearly interpolate a coarse field onto a finer grid.

    The grids must cover the same domain; the fine grid must have at
    least as many nodes per axis. Nesting is not required: the fine
    nodes are sampled wherever they fall in the coarse cells.
    """
    cg = coarse.grid
    if not cg.same_extents(fine_grid):
        raise DomainMismatchError(
            f"prolongate: domains differ, {cg.lx}x{cg.ly}@{cg.origin} vs "
            f"{fine_grid.lx}x{fine_grid.ly}@{fine_grid.origin}"
        )
    if fine_grid.nx < cg.nx or fine_grid.ny < cg.ny:
        raise DomainMismatchError(
            f"prolongate: target {fine_grid.nx}x{fine_grid.ny} is coarser than "
            f"source {cg.nx}x{cg.ny}"
        )
    X, Y = fine_grid.coords()
    return ScalarField(fine_grid, sample_bilinear(coarse, X, Y))


def restrict(fine: ScalarField, coarse_grid: Grid) -> ScalarField:
    """Restrict a fine field to a nested coarse grid by injection.

    Every coarse node must coincide with a fine node, i.e. the interval
    count per axis of the fine grid must be a multiple of the coarse
    grid's. Used to build coarse test problems, not multigrid cycling.
    """
    fg = fine.grid
    if not fg.same_extents(coarse_grid):
        raise DomainMismatchError(
            f"restrict: domains differ, {fg.lx}x{fg.ly}@{fg.origin} vs "
            f"{coarse_grid.lx}x{coarse_grid.ly}@{coarse_grid.origin}"
        )
    if (fg.nx - 1) % (coarse_grid.nx - 1) or (fg.ny - 1) % (coarse_grid.ny - 1):
        raise DomainMismatchError(
            f"restrict: {coarse_grid.nx}x{coarse_grid.ny} is not nested in {fg.nx}x{fg.ny}"
        )
    rx = (fg.nx - 1) // (coarse_grid.nx - 1)
    ry = (fg.ny - 1) // (coarse_grid.ny - 1)
    return ScalarField(coarse_grid, fine.values[::ry, ::rx].copy())


def normalize(fld: ScalarField, stats: FieldStats) -> ScalarField:
    return ScalarField(fld.grid, (fld.values - stats.mean) / stats.std)


def denormalize(fld: ScalarField, stats: FieldStats) -> ScalarField:
    return ScalarField(fld.grid, fld.values * stats.std + stats.mean)


def l2_distance(a, b) -> float:
    """Euclidean norm of ``a - b`` for same-shaped vectors."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape:
        raise DimensionError(f"l2_distance: shapes {av.shape} and {bv.shape} differ")
    return float(np.linalg.norm(av - bv))


def relative_l2(a: ScalarField, b: ScalarField) -> float:
    """``||a - b||_2 / ||b||_2``, or the absolute norm when b is near zero."""
    if a.grid.shape != b.grid.shape:
        raise DimensionError(
            f"relative_l2: grids {a.grid.shape} and {b.grid.shape} differ"
        )
    diff = float(np.linalg.norm(a.values - b.values))
    denom = float(np.linalg.norm(b.values))
    if denom < 1e-14:
        return diff
    return diff / denom


def write_field(fld: ScalarField, path) -> None:
    """Write a field in the package binary format.

    16-byte little-endian header (magic ``LPDF``, u32 nx, u32 ny, u32
    reserved) followed by nx*ny float64 values, row-major. The write
    goes through a temporary file and a rename so readers never observe
    a partial file.
    """
    path = os.fspath(path)
    g = fld.grid
    payload = np.ascontiguousarray(fld.values, dtype="<f8").tobytes()
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, g.nx, g.ny, 0))
        fh.write(payload)
    os.replace(tmp, path)


def read_field(path, lx: float = 1.0, ly: float = 1.0, origin=(0.0, 0.0)) -> ScalarField:
    """Read a field written by :func:`write_field`.

    The format stores only node counts; physical extents are supplied by
    the caller (datasets carry them in their JSON metadata).
    """
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    magic, nx, ny, _reserved = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", offset=0)
    if nx < 2 or ny < 2:
        raise FormatError(f"{path}: invalid node counts {nx}x{ny}", offset=4)
    expected = _HEADER.size + 8 * nx * ny
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload is {len(raw) - _HEADER.size} bytes, expected {8 * nx * ny}",
            offset=min(len(raw), expected),
        )
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(ny, nx)
    bad = ~np.isfinite(values)
    if bad.any():
        first = int(np.flatnonzero(bad.reshape(-1))[0])
        raise FormatError(f"{path}: non-finite value", offset=_HEADER.size + 8 * first)
    grid = Grid(nx=int(nx), ny=int(ny), lx=lx, ly=ly, origin=origin)
    return ScalarField(grid, values.astype(np.float64))
