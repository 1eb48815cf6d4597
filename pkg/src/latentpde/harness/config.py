"""Experiment configuration: one JSON document drives every command.

The document is schema-versioned and round-trips exactly, so a config
file plus the seeds inside it fully reproduces a run. Nested blocks map
onto the library's own types (GeometrySpec, BoundarySpec, TrainConfig,
HybridConfig); their invariants fire during parsing.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

from ..autoenc import (
    CONDITION_ROLES,
    TrainConfig,
    solution_latent_dim,
    source_latent_dim,
)
from ..conditions import BoundarySpec, GeometrySpec, Rect, Solid
from ..errors import FormatError, InvalidSpecError
from ..fields import Grid
from ..hybrid import CoarseGridInit, HybridConfig, ZeroFieldInit

SCHEMA_VERSION = 1

# Offset separating the test/query seed stream from the training stream;
# recorded in manifests so "unseen by the networks" is checkable.
TEST_SEED_OFFSET = 1_000_000

# A failed draw (reference solver diverged or ran out its budget) is
# retried at seed + REDRAW_STRIDE * attempt, at most MAX_REDRAWS times.
REDRAW_STRIDE = 7_777_777
MAX_REDRAWS = 3


@dataclass(frozen=True)
class PhysicsSpec:
    kind: str
    rayleigh: float = 1e4
    prandtl: float = 0.71

    def __post_init__(self):
        if self.kind not in ("heat", "boussinesq"):
            raise InvalidSpecError(f"physics kind must be heat or boussinesq, got {self.kind!r}")

    @property
    def var_names(self) -> Tuple[str, ...]:
        return ("T",) if self.kind == "heat" else ("psi", "omega", "T")


@dataclass(frozen=True)
class SourceRanges:
    support: Rect
    k_min: int = 1
    k_max: int = 20
    amp_min: float = 5.0
    amp_max: float = 20.0

    def __post_init__(self):
        if not (1 <= self.k_min <= self.k_max <= 20):
            raise InvalidSpecError(
                f"component count range [{self.k_min}, {self.k_max}] outside [1, 20]"
            )
        if not (0.0 < self.amp_min <= self.amp_max):
            raise InvalidSpecError(
                f"amplitude range [{self.amp_min}, {self.amp_max}] must be positive and ordered"
            )


@dataclass(frozen=True)
class DatasetSpec:
    n_train: int = 200
    n_test: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.n_train < 20:
            raise InvalidSpecError(f"n_train must be at least 20, got {self.n_train}")
        if self.n_test < 1:
            raise InvalidSpecError(f"n_test must be at least 1, got {self.n_test}")
        if self.n_train >= TEST_SEED_OFFSET:
            raise InvalidSpecError("n_train would collide with the test seed stream")


@dataclass(frozen=True)
class LatentSpec:
    """Latent dimensions; None means the ratio-derived default
    (solution nodes*n_vars/64, condition nodes/12)."""

    roles: Tuple[str, ...] = CONDITION_ROLES
    solution: Optional[int] = None
    geometry: Optional[int] = None
    source: Optional[int] = None
    boundary: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "roles", tuple(self.roles))
        bad = [r for r in self.roles if r not in CONDITION_ROLES]
        if bad:
            raise InvalidSpecError(f"unknown condition roles {bad}; valid: {CONDITION_ROLES}")
        if len(set(self.roles)) != len(self.roles):
            raise InvalidSpecError("condition roles listed twice")
        for name in ("solution", "geometry", "source", "boundary"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise InvalidSpecError(f"latent dim {name} must be positive, got {v}")

    def role_dim(self, role: str, grid: Grid) -> int:
        given = getattr(self, role)
        return given if given is not None else source_latent_dim(grid)

    def solution_dim(self, grid: Grid, n_vars: int) -> int:
        return self.solution if self.solution is not None else solution_latent_dim(grid, n_vars)


@dataclass(frozen=True)
class ReferenceSpec:
    """Reference solver budget; None picks the per-physics default
    (heat: 1e-7 / 50000 sweeps, boussinesq: 1e-6 / 300 outers)."""

    tol: Optional[float] = None
    max_iter: Optional[int] = None

    def resolved(self, kind: str) -> Tuple[float, int]:
        tol = self.tol if self.tol is not None else (1e-7 if kind == "heat" else 1e-6)
        cap = self.max_iter if self.max_iter is not None else (50000 if kind == "heat" else 300)
        return tol, cap


@dataclass(frozen=True)
class ExperimentConfig:
    grid: Grid
    physics: PhysicsSpec
    geometry: GeometrySpec
    boundary: BoundarySpec
    source: SourceRanges
    dataset: DatasetSpec = DatasetSpec()
    latent: LatentSpec = LatentSpec()
    train: TrainConfig = TrainConfig()
    condition_train: TrainConfig = None  # defaults to `train` when omitted
    hybrid: HybridConfig = HybridConfig()
    reference: ReferenceSpec = ReferenceSpec()
    out_dir: Path = Path("runs/experiment")

    def __post_init__(self):
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.condition_train is None:
            object.__setattr__(self, "condition_train", self.train)
        domain = Rect(
            self.grid.origin[0],
            self.grid.origin[1],
            self.grid.origin[0] + self.grid.lx,
            self.grid.origin[1] + self.grid.ly,
        )
        if not domain.contains_rect(self.source.support):
            raise InvalidSpecError("source support rectangle lies outside the domain")
        if self.geometry.domain != domain:
            raise InvalidSpecError("geometry domain must match the grid extents")
        if self.train.residual_mode == "all" and self.physics.kind != "boussinesq":
            raise InvalidSpecError('residual_mode "all" needs boussinesq physics')
        if "T" not in self.boundary.conditions:
            raise InvalidSpecError("boundary conditions must cover temperature")

    @property
    def var_names(self) -> Tuple[str, ...]:
        return self.physics.var_names

    def train_seed(self, index: int) -> int:
        return self.dataset.seed + index

    def test_seed(self, index: int) -> int:
        return self.dataset.seed + TEST_SEED_OFFSET + index

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        hy = self.hybrid
        if isinstance(hy.init, CoarseGridInit):
            init = {"mode": "coarse", "n": hy.init.n, "iters": hy.init.iters}
        else:
            init = {"mode": "zero"}
        return {
            "schema_version": SCHEMA_VERSION,
            "grid": {
                "nx": self.grid.nx,
                "ny": self.grid.ny,
                "lx": self.grid.lx,
                "ly": self.grid.ly,
                "origin": list(self.grid.origin),
            },
            "physics": {
                "kind": self.physics.kind,
                "rayleigh": self.physics.rayleigh,
                "prandtl": self.physics.prandtl,
            },
            "geometry": {
                "solids": [
                    {"rect": s.rect.to_dict(), "conductivity_ratio": s.conductivity_ratio}
                    for s in self.geometry.solids
                ]
            },
            "boundary": self.boundary.to_dict(),
            "source": {
                "support": self.source.support.to_dict(),
                "components": [self.source.k_min, self.source.k_max],
                "amplitude": [self.source.amp_min, self.source.amp_max],
            },
            "dataset": dataclasses.asdict(self.dataset),
            "latent": {
                "roles": list(self.latent.roles),
                "solution": self.latent.solution,
                "geometry": self.latent.geometry,
                "source": self.latent.source,
                "boundary": self.latent.boundary,
            },
            "train": _train_to_dict(self.train),
            "condition_train": _train_to_dict(self.condition_train),
            "hybrid": {
                "tol": hy.tol,
                "max_iter": hy.max_iter,
                "damping": hy.damping,
                "init": init,
            },
            "reference": {"tol": self.reference.tol, "max_iter": self.reference.max_iter},
            "out_dir": str(self.out_dir),
        }

    def echo_dict(self) -> dict:
        """to_dict without out_dir: the echo artifacts embed, so a
        dataset or bundle is byte-identical wherever it was written."""
        d = self.to_dict()
        d.pop("out_dir")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise FormatError(
                f"config schema_version {version!r} not supported (this build reads {SCHEMA_VERSION})"
            )
        try:
            g = d["grid"]
            grid = Grid(g["nx"], g["ny"], g["lx"], g["ly"], tuple(g.get("origin", (0.0, 0.0))))
            ph = d["physics"]
            physics = PhysicsSpec(
                ph["kind"], ph.get("rayleigh", 1e4), ph.get("prandtl", 0.71)
            )
            domain = Rect(
                grid.origin[0], grid.origin[1],
                grid.origin[0] + grid.lx, grid.origin[1] + grid.ly,
            )
            geometry = GeometrySpec(
                domain=domain,
                solids=tuple(
                    Solid(Rect.from_dict(s["rect"]), s["conductivity_ratio"])
                    for s in d.get("geometry", {}).get("solids", [])
                ),
            )
            boundary = BoundarySpec.from_dict(d["boundary"])
            sr = d["source"]
            source = SourceRanges(
                support=Rect.from_dict(sr["support"]),
                k_min=sr.get("components", [1, 20])[0],
                k_max=sr.get("components", [1, 20])[1],
                amp_min=sr.get("amplitude", [5.0, 20.0])[0],
                amp_max=sr.get("amplitude", [5.0, 20.0])[1],
            )
            dataset = DatasetSpec(**d.get("dataset", {}))
            lt = d.get("latent", {})
            latent = LatentSpec(
                roles=tuple(lt.get("roles", CONDITION_ROLES)),
                solution=lt.get("solution"),
                geometry=lt.get("geometry"),
                source=lt.get("source"),
                boundary=lt.get("boundary"),
            )
            train = _train_from_dict(d.get("train", {}))
            condition_train = (
                _train_from_dict(d["condition_train"]) if "condition_train" in d else None
            )
            hy = d.get("hybrid", {})
            init_d = hy.get("init", {"mode": "coarse"})
            if init_d.get("mode") == "zero":
                init = ZeroFieldInit()
            elif init_d.get("mode") == "coarse":
                init = CoarseGridInit(init_d.get("n", 16), init_d.get("iters", 200))
            else:
                raise FormatError(f"unknown hybrid init mode {init_d.get('mode')!r}")
            hybrid = HybridConfig(
                tol=hy.get("tol", 1e-6),
                max_iter=hy.get("max_iter", 500),
                damping=hy.get("damping", 1.0),
                init=init,
            )
            ref = d.get("reference", {})
            reference = ReferenceSpec(ref.get("tol"), ref.get("max_iter"))
            return cls(
                grid=grid,
                physics=physics,
                geometry=geometry,
                boundary=boundary,
                source=source,
                dataset=dataset,
                latent=latent,
                train=train,
                condition_train=condition_train,
                hybrid=hybrid,
                reference=reference,
                out_dir=Path(d.get("out_dir", "runs/experiment")),
            )
        except KeyError as exc:
            raise FormatError(f"config missing required key {exc}") from None
        except TypeError as exc:
            raise FormatError(f"malformed config: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"config is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise FormatError("config must be a JSON object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        fp = Path(path)
        if not fp.is_file():
            raise FormatError(f"config file not found: {fp}")
        return cls.from_json(fp.read_text())


def _train_to_dict(cfg: TrainConfig) -> dict:
    return {
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "pde_loss_weight": cfg.pde_loss_weight,
        "seed": cfg.seed,
        "validation_fraction": cfg.validation_fraction,
        "residual_mode": cfg.residual_mode,
        "channels": list(cfg.channels),
        "lr_schedule": cfg.lr_schedule,
    }


def _train_from_dict(d: dict) -> TrainConfig:
    kw = dict(d)
    if "channels" in kw:
        kw["channels"] = tuple(kw["channels"])
    try:
        return TrainConfig(**kw)
    except TypeError as exc:
        raise FormatError(f"malformed train block: {exc}") from None
