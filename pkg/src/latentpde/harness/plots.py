"""File-based plot emission: grayscale maps, grid CSVs, line profiles.

Binary PGM (P5) needs no imaging dependency and diffs cleanly; paired
with a matrix CSV of the same field it covers both visual inspection and
numeric post-processing. CSVs keep the solver's row order (row 0 is
y = origin_y); the PGM flips rows so the image displays y upward.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from ..conditions import Rect
from ..errors import DimensionError
from ..fields import Grid, ScalarField, sample_bilinear


def write_pgm(path, values: np.ndarray, lo: Optional[float] = None, hi: Optional[float] = None) -> None:
    """8-bit binary portable graymap of a 2-D array.

    ``lo``/``hi`` pin the gray scale (values outside clip), so several
    images can share one scale; default is the array's own range. A
    constant array maps to mid-gray.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise DimensionError(f"graymap needs a 2-D array, got shape {v.shape}")
    lo = float(v.min()) if lo is None else float(lo)
    hi = float(v.max()) if hi is None else float(hi)
    if hi > lo:
        gray = np.clip((v - lo) / (hi - lo), 0.0, 1.0)
        pixels = np.round(gray * 255.0).astype(np.uint8)
    else:
        pixels = np.full(v.shape, 128, dtype=np.uint8)
    ny, nx = v.shape
    payload = b"P5\n%d %d\n255\n" % (nx, ny) + pixels[::-1].tobytes()
    path = Path(path)
    tmp = path.with_name(f"{path.name}.tmp.{os.getpid()}")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def read_pgm(path) -> np.ndarray:
    """Inverse of write_pgm up to quantization: returns uint8 rows with
    row 0 at y = origin_y again."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise DimensionError(f"{path}: not an 8-bit P5 graymap")
    nx, ny = (int(t) for t in parts[1].split())
    pixels = np.frombuffer(parts[3][: nx * ny], dtype=np.uint8).reshape(ny, nx)
    return pixels[::-1].copy()


def write_grid_csv(path, values: np.ndarray) -> None:
    """Matrix CSV with 17 significant digits; row k is grid row k."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise DimensionError(f"grid CSV needs a 2-D array, got shape {v.shape}")
    lines = [",".join(f"{x:.17g}" for x in row) for row in v]
    path = Path(path)
    tmp = path.with_name(f"{path.name}.tmp.{os.getpid()}")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_grid_csv(path) -> np.ndarray:
    rows = [
        [float(tok) for tok in line.split(",")]
        for line in Path(path).read_text().splitlines()
        if line
    ]
    return np.array(rows, dtype=np.float64)


def crop_to_rect(grid: Grid, values: np.ndarray, rect: Rect) -> Tuple[np.ndarray, dict]:
    """Sub-array of the node rows/columns covering ``rect`` (inclusive).

    Returns the cropped values and the index window, for captioning.
    """
    xs = grid.xs()
    ys = grid.ys()
    eps = 1e-12
    i0 = int(np.searchsorted(xs, rect.x0 - eps))
    i1 = int(np.searchsorted(xs, rect.x1 + eps))
    j0 = int(np.searchsorted(ys, rect.y0 - eps))
    j1 = int(np.searchsorted(ys, rect.y1 + eps))
    i1 = max(i1, i0 + 1)
    j1 = max(j1, j0 + 1)
    window = {"rows": [j0, j1], "cols": [i0, i1]}
    return np.asarray(values)[j0:j1, i0:i1], window


def centerline_profile(fld: ScalarField) -> Tuple[np.ndarray, np.ndarray]:
    """Field values along x = domain center for every grid y row."""
    g = fld.grid
    xc = g.origin[0] + 0.5 * g.lx
    ys = g.ys()
    return ys, np.asarray(sample_bilinear(fld, np.full(g.ny, xc), ys))


def write_centerline_csv(path, fld_hybrid: ScalarField, fld_reference: ScalarField) -> None:
    """CSV (y, hybrid, reference) down the domain-center vertical line."""
    ys, h = centerline_profile(fld_hybrid)
    _, r = centerline_profile(fld_reference)
    lines = ["y,hybrid,reference"]
    lines += [f"{y:.17g},{a:.17g},{b:.17g}" for y, a, b in zip(ys, h, r)]
    path = Path(path)
    tmp = path.with_name(f"{path.name}.tmp.{os.getpid()}")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)
