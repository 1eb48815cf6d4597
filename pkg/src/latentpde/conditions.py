"""PDE condition generation: heat sources, geometry masks, boundary specs.

A problem instance is parameterized by three conditions, each of which
can be rendered onto a grid as a scalar field so the condition
autoencoders can compress it:

* heat source: a Gaussian mixture confined to a support rectangle,
* geometry: axis-aligned solid rectangles, rendered as a signed
  distance function and binarized to a 0/1 mask,
* boundary conditions: per-edge Dirichlet or Neumann per variable,
  rendered onto the boundary ring of the grid.

All generation is deterministic per seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from latentpde.errors import InvalidSpecError
from latentpde.fields import Grid, ScalarField

# Component parameters are drawn in a fixed order (mean_x, mean_y,
# sigma_x, sigma_y, amplitude) so that fields are bit-reproducible.
SIGMA_FRACTION_RANGE = (0.05, 0.3)

EDGES = ("left", "right", "bottom", "top")

# Edge-type marker added to boundary-field values: Neumann edges are
# shifted by this offset so a zero-flux edge does not collide with a
# zero-value Dirichlet edge. Assumes |value| stays well under the offset.
_NEUMANN_OFFSET = 10.0


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle [x0, x1] x [y0, y1]."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise InvalidSpecError(f"degenerate rectangle {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def contains_rect(self, other: "Rect", tol: float = 1e-12) -> bool:
        return (
            other.x0 >= self.x0 - tol
            and other.x1 <= self.x1 + tol
            and other.y0 >= self.y0 - tol
            and other.y1 <= self.y1 + tol
        )

    def to_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "x1": self.x1, "y1": self.y1}

    @classmethod
    def from_dict(cls, d: dict) -> "Rect":
        return cls(x0=d["x0"], y0=d["y0"], x1=d["x1"], y1=d["y1"])


@dataclass(frozen=True)
class GaussianComponent:
    amplitude: float
    mean: tuple[float, float]
    sigma: tuple[float, float]

    def __post_init__(self):
        if self.amplitude < 0:
            raise InvalidSpecError(f"negative amplitude {self.amplitude}")
        if self.sigma[0] <= 0 or self.sigma[1] <= 0:
            raise InvalidSpecError(f"non-positive sigma {self.sigma}")


@dataclass(frozen=True)
class GaussianMixtureSpec:
    """Parametric heat-source description: 1 to 20 Gaussian bumps.

    ``support`` is the rectangle the source is confined to (zero
    outside); storing it with the components lets a serialized spec be
    re-evaluated without the sampling-time arguments.
    """

    components: tuple[GaussianComponent, ...]
    seed: int
    support: Rect | None = None

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not 1 <= len(self.components) <= 20:
            raise InvalidSpecError(f"component count {len(self.components)} outside [1, 20]")

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "components": [
                {"amplitude": c.amplitude, "mean": list(c.mean), "sigma": list(c.sigma)}
                for c in self.components
            ],
        }
        if self.support is not None:
            d["support"] = self.support.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianMixtureSpec":
        comps = tuple(
            GaussianComponent(
                amplitude=c["amplitude"],
                mean=(c["mean"][0], c["mean"][1]),
                sigma=(c["sigma"][0], c["sigma"][1]),
            )
            for c in d["components"]
        )
        support = Rect.from_dict(d["support"]) if "support" in d else None
        return cls(components=comps, seed=int(d["seed"]), support=support)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GaussianMixtureSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Solid:
    """One solid rectangle with its conductivity relative to the fluid."""

    rect: Rect
    conductivity_ratio: float

    def __post_init__(self):
        if self.conductivity_ratio <= 0:
            raise InvalidSpecError(f"conductivity ratio must be positive, got {self.conductivity_ratio}")


@dataclass(frozen=True)
class GeometrySpec:
    """Solid layout inside a rectangular domain."""

    domain: Rect
    solids: tuple[Solid, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "solids", tuple(self.solids))
        for s in self.solids:
            if not self.domain.contains_rect(s.rect):
                raise InvalidSpecError(f"solid {s.rect} outside domain {self.domain}")

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.to_dict(),
            "solids": [
                {"rect": s.rect.to_dict(), "conductivity_ratio": s.conductivity_ratio}
                for s in self.solids
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeometrySpec":
        return cls(
            domain=Rect.from_dict(d["domain"]),
            solids=tuple(
                Solid(rect=Rect.from_dict(s["rect"]), conductivity_ratio=s["conductivity_ratio"])
                for s in d["solids"]
            ),
        )


@dataclass(frozen=True)
class EdgeCondition:
    kind: str  # "dirichlet" | "neumann"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann"):
            raise InvalidSpecError(f"unknown boundary kind {self.kind!r}")


def dirichlet(value: float) -> EdgeCondition:
    return EdgeCondition("dirichlet", float(value))


def neumann(flux: float = 0.0) -> EdgeCondition:
    return EdgeCondition("neumann", float(flux))


@dataclass(frozen=True)
class BoundarySpec:
    """Per-variable, per-edge boundary conditions.

    ``conditions`` maps a variable name to a mapping over the four edges
    ("left", "right", "bottom", "top"). Temperature ("T") must have at
    least one Dirichlet edge so conduction problems stay well posed.
    """

    conditions: dict = field(default_factory=dict)

    def __post_init__(self):
        frozen = {}
        for var, edges in self.conditions.items():
            missing = [e for e in EDGES if e not in edges]
            extra = [e for e in edges if e not in EDGES]
            if missing or extra:
                raise InvalidSpecError(
                    f"variable {var!r} must define exactly the edges {EDGES}, "
                    f"missing {missing}, unknown {extra}"
                )
            frozen[var] = {e: edges[e] for e in EDGES}
        if "T" in frozen and not any(c.kind == "dirichlet" for c in frozen["T"].values()):
            raise InvalidSpecError("temperature needs at least one Dirichlet edge")
        object.__setattr__(self, "conditions", frozen)

    def edge(self, var: str, edge: str) -> EdgeCondition:
        return self.conditions[var][edge]

    def to_dict(self) -> dict:
        return {
            var: {e: {"kind": c.kind, "value": c.value} for e, c in edges.items()}
            for var, edges in self.conditions.items()
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoundarySpec":
        return cls(
            conditions={
                var: {e: EdgeCondition(kind=c["kind"], value=c["value"]) for e, c in edges.items()}
                for var, edges in d.items()
            }
        )


def sample_gmm(
    seed: int,
    k_min: int,
    k_max: int,
    grid: Grid,
    support: Rect,
    amp_range: tuple[float, float],
) -> tuple[GaussianMixtureSpec, ScalarField]:
    """Draw a random Gaussian-mixture heat source and evaluate it.

    The component count is uniform in [k_min, k_max], means are uniform
    in the support rectangle, sigmas uniform in
    ``SIGMA_FRACTION_RANGE`` times the support dimensions, amplitudes
    uniform in ``amp_range``. The field is zero outside the support.
    """
    if not (1 <= k_min <= k_max <= 20):
        raise InvalidSpecError(f"component range [{k_min}, {k_max}] outside [1, 20]")
    gx0, gy0 = grid.origin
    domain = Rect(gx0, gy0, gx0 + grid.lx, gy0 + grid.ly)
    if not domain.contains_rect(support):
        raise InvalidSpecError(f"support {support} outside grid domain {domain}")
    if amp_range[0] > amp_range[1] or amp_range[0] < 0:
        raise InvalidSpecError(f"bad amplitude range {amp_range}")

    rng = np.random.default_rng(seed)
    k = int(rng.integers(k_min, k_max + 1))
    lo, hi = SIGMA_FRACTION_RANGE
    comps = []
    for _ in range(k):
        mx = rng.uniform(support.x0, support.x1)
        my = rng.uniform(support.y0, support.y1)
        sx = rng.uniform(lo, hi) * support.width
        sy = rng.uniform(lo, hi) * support.height
        amp = rng.uniform(amp_range[0], amp_range[1])
        comps.append(GaussianComponent(amplitude=amp, mean=(mx, my), sigma=(sx, sy)))
    spec = GaussianMixtureSpec(components=tuple(comps), seed=int(seed), support=support)
    return spec, evaluate_gmm(spec, grid)


def evaluate_gmm(spec: GaussianMixtureSpec, grid: Grid) -> ScalarField:
    """Evaluate q(x,y) = sum_i A_i exp(-(x-mx)^2/2sx^2 - (y-my)^2/2sy^2)."""
    X, Y = grid.coords()
    q = np.zeros(grid.shape)
    for c in spec.components:
        mx, my = c.mean
        sx, sy = c.sigma
        q += c.amplitude * np.exp(
            -((X - mx) ** 2) / (2.0 * sx * sx) - ((Y - my) ** 2) / (2.0 * sy * sy)
        )
    if spec.support is not None:
        s = spec.support
        inside = (X >= s.x0) & (X <= s.x1) & (Y >= s.y0) & (Y <= s.y1)
        q = np.where(inside, q, 0.0)
    return ScalarField(grid, q)


def integrated_power(spec: GaussianMixtureSpec, grid: Grid) -> float:
    """Trapezoidal integral of the source field; recorded in metadata."""
    q = evaluate_gmm(spec, grid).values
    return float(np.trapz(np.trapz(q, dx=grid.hx, axis=1), dx=grid.hy))


def _rect_signed_distance(rect: Rect, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    # Classic box SDF: negative inside, zero on the boundary.
    qx = np.maximum(rect.x0 - X, X - rect.x1)
    qy = np.maximum(rect.y0 - Y, Y - rect.y1)
    outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
    inside = np.minimum(np.maximum(qx, qy), 0.0)
    return outside + inside


def geometry_to_levelset(spec: GeometrySpec, grid: Grid) -> ScalarField:
    """Signed distance to the union of solid rectangles (negative inside).

    With no solids the field is the positive sentinel ``hypot(lx, ly)``
    (nothing in the domain can be farther from a solid than its diagonal).
    """
    X, Y = grid.coords()
    cap = float(np.hypot(grid.lx, grid.ly))
    phi = np.full(grid.shape, cap)
    for s in spec.solids:
        phi = np.minimum(phi, _rect_signed_distance(s.rect, X, Y))
    return ScalarField(grid, phi)


def binarize_levelset(phi: ScalarField) -> ScalarField:
    """0/1 mask: 1 where phi <= 0 (boundary counts as inside)."""
    return ScalarField(phi.grid, np.where(phi.values <= 0.0, 1.0, 0.0))


def solid_mask(spec: GeometrySpec, grid: Grid) -> ScalarField:
    return binarize_levelset(geometry_to_levelset(spec, grid))


def conductivity_field(spec: GeometrySpec, grid: Grid) -> ScalarField:
    """Conductivity ratios on the grid: 1 in fluid, per-solid ratio inside.

    Later solids in the list overwrite earlier ones where they overlap.
    Node membership matches the level-set convention (boundary inside).
    """
    X, Y = grid.coords()
    k = np.ones(grid.shape)
    for s in spec.solids:
        inside = _rect_signed_distance(s.rect, X, Y) <= 0.0
        k = np.where(inside, s.conductivity_ratio, k)
    return ScalarField(grid, k)


def boundary_to_field(spec: BoundarySpec, var: str, grid: Grid) -> ScalarField:
    """Render one variable's boundary conditions onto the boundary ring.

    Interior nodes are zero. Edge nodes carry the condition value;
    Neumann edges are offset by ``_NEUMANN_OFFSET`` so condition type
    survives the encoding. Corners are written in edge order (left,
    right, bottom, top), so the horizontal edges win the corners.
    """
    if var not in spec.conditions:
        raise InvalidSpecError(f"no boundary conditions declared for variable {var!r}")
    out = np.zeros(grid.shape)
    slices = {
        "left": (slice(None), 0),
        "right": (slice(None), grid.nx - 1),
        "bottom": (0, slice(None)),
        "top": (grid.ny - 1, slice(None)),
    }
    for edge in EDGES:
        c = spec.edge(var, edge)
        encoded = c.value if c.kind == "dirichlet" else _NEUMANN_OFFSET + c.value
        out[slices[edge]] = encoded
    return ScalarField(grid, out)
