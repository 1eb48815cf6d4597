"""Model bundle directories.

A bundle is a directory holding every network checkpoint plus one JSON
manifest tying them together: grid, roles, latent dims, normalization
stats, the condition-latent concatenation order, and whatever training
provenance the caller passes through ``extra`` (config, dataset hash).
The manifest also records which single-letter subscript each condition
role carries in the latent naming scheme (g: geometry, h: heat source,
b: boundary), since the naming is a convention rather than forced.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional

from ..errors import FormatError
from ..fields import FieldStats, Grid
from ..neural import load_checkpoint, save_checkpoint
from .models import ConditionAE, SolutionAE

MANIFEST = "bundle.json"
ROLE_SUBSCRIPTS = {"geometry": "g", "source": "h", "boundary": "b"}


@dataclass(frozen=True)
class ModelBundle:
    """Everything the latent fixed-point iteration needs: the frozen
    condition autoencoders keyed by role, the conditioned solution
    autoencoder, and the manifest the pair was loaded with (None for
    bundles assembled in memory)."""

    condition_aes: Dict[str, ConditionAE]
    solution: SolutionAE
    manifest: Optional[dict] = None


def _grid_to_dict(g: Grid) -> dict:
    return {"nx": g.nx, "ny": g.ny, "lx": g.lx, "ly": g.ly, "origin": list(g.origin)}


def _grid_from_dict(d: dict) -> Grid:
    return Grid(d["nx"], d["ny"], d["lx"], d["ly"], tuple(d["origin"]))


def _stats_to_dict(s: FieldStats) -> dict:
    return {"mean": s.mean, "std": s.std}


def save_bundle(
    path,
    condition_aes: Mapping[str, ConditionAE],
    solution_ae: SolutionAE,
    extra: Optional[dict] = None,
) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    conditions = {}
    for role, ae in condition_aes.items():
        enc, dec = f"condition_{role}_encoder.ckpt", f"condition_{role}_decoder.ckpt"
        save_checkpoint(ae.encoder, root / enc)
        save_checkpoint(ae.decoder, root / dec)
        conditions[role] = {
            "latent_dim": ae.latent_dim,
            "stats": _stats_to_dict(ae.stats),
            "encoder": enc,
            "decoder": dec,
        }
    save_checkpoint(solution_ae.encoder, root / "solution_encoder.ckpt")
    save_checkpoint(solution_ae.decoder, root / "solution_decoder.ckpt")
    manifest = {
        "version": 1,
        "grid": _grid_to_dict(solution_ae.grid),
        "role_subscripts": {r: ROLE_SUBSCRIPTS.get(r, r[0]) for r in condition_aes},
        "conditions": conditions,
        "solution": {
            "latent_dim": solution_ae.latent_dim,
            "n_vars": solution_ae.n_vars,
            "var_names": list(solution_ae.var_names),
            "stats": [_stats_to_dict(s) for s in solution_ae.stats],
            "condition_latent_dims": dict(solution_ae.cond_dims),
            "cond_roles": list(solution_ae.cond_roles),
            "ranges": None
            if solution_ae.ranges is None
            else [list(r) for r in solution_ae.ranges],
            "encoder": "solution_encoder.ckpt",
            "decoder": "solution_decoder.ckpt",
        },
        "extra": extra or {},
    }
    tmp = root / f"{MANIFEST}.tmp.{os.getpid()}"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    os.replace(tmp, root / MANIFEST)


def load_bundle(path) -> ModelBundle:
    root = Path(path)
    mp = root / MANIFEST
    if not mp.is_file():
        raise FormatError(f"{root}: no {MANIFEST} manifest")
    try:
        manifest = json.loads(mp.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mp}: unreadable manifest ({exc})") from None
    for key in ("grid", "conditions", "solution"):
        if key not in manifest:
            raise FormatError(f"{mp}: manifest missing {key!r}")
    grid = _grid_from_dict(manifest["grid"])

    def ckpt(name):
        fp = root / name
        if not fp.is_file():
            raise FormatError(f"{root}: manifest references missing file {name}")
        return load_checkpoint(fp)

    condition_aes = {}
    for role, info in manifest["conditions"].items():
        condition_aes[role] = ConditionAE(
            encoder=ckpt(info["encoder"]),
            decoder=ckpt(info["decoder"]),
            latent_dim=int(info["latent_dim"]),
            stats=FieldStats(info["stats"]["mean"], info["stats"]["std"]),
            grid=grid,
            role=role,
        )
    s = manifest["solution"]
    ranges = s.get("ranges")
    solution_ae = SolutionAE(
        encoder=ckpt(s["encoder"]),
        decoder=ckpt(s["decoder"]),
        latent_dim=int(s["latent_dim"]),
        n_vars=int(s["n_vars"]),
        var_names=tuple(s["var_names"]),
        stats=tuple(FieldStats(d["mean"], d["std"]) for d in s["stats"]),
        cond_dims={k: int(v) for k, v in s["condition_latent_dims"].items()},
        cond_roles=tuple(s["cond_roles"]),
        grid=grid,
        ranges=None if ranges is None else tuple((r[0], r[1]) for r in ranges),
    )
    return ModelBundle(condition_aes, solution_ae, manifest)
