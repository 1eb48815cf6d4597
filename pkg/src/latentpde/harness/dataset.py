"""Dataset generation: seeded samples, atomic writes, hash-based resume.

A dataset directory holds one subdirectory per sample:

    train/000000/
        sample.json     provenance: seeds, redraws, solver record, hash
        source_spec.json  the Gaussian-mixture draw, re-renderable
        source.field  geometry.field  boundary.field   condition fields
        T.field  [psi.field  omega.field]              reference solution

plus a root ``dataset.json`` tying the splits together. Fields use the
package binary field format (byte-deterministic), and a sample directory
is built under a temporary name and renamed into place, so a crash never
leaves a half-written sample that resume would trust.

Train sample i draws at seed base+i, test sample j at
base+TEST_SEED_OFFSET+j; the streams cannot collide (n_train is capped
below the offset) and both are recorded, which makes "this source was
never seen in training" a checkable statement rather than a promise. If
the reference solver diverges or exhausts its budget on a draw, the draw
is logged and retried at seed + REDRAW_STRIDE * attempt, at most
MAX_REDRAWS times.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ..conditions import conductivity_field, sample_gmm, solid_mask
from ..errors import DatasetError, DivergenceError
from ..fields import ScalarField, read_field, write_field
from ..hybrid import condition_fields_from_problem
from ..solver import BoussinesqProblem, HeatProblem, heat_residual, heat_scale, solve_boussinesq, solve_heat
from .config import MAX_REDRAWS, REDRAW_STRIDE, ExperimentConfig

MANIFEST = "dataset.json"
SAMPLE_MANIFEST = "sample.json"


def _workers(n_tasks: int) -> int:
    w = os.cpu_count() or 1
    cap = os.environ.get("LATENTPDE_THREADS")
    if cap:
        w = min(w, max(1, int(cap)))
    return max(1, min(w, n_tasks))


def json_bytes(obj) -> bytes:
    return json.dumps(obj, indent=2, sort_keys=True).encode()


def write_json(path: Path, obj) -> None:
    tmp = path.with_name(f"{path.name}.tmp.{os.getpid()}")
    tmp.write_bytes(json_bytes(obj))
    os.replace(tmp, path)


def build_problem(config: ExperimentConfig, source: ScalarField):
    """Assemble the reference problem for one source field."""
    heat = HeatProblem(
        grid=config.grid,
        conductivity=conductivity_field(config.geometry, config.grid),
        source=source,
        bc=config.boundary,
    )
    if config.physics.kind == "heat":
        return heat
    return BoussinesqProblem(
        heat=heat,
        rayleigh=config.physics.rayleigh,
        prandtl=config.physics.prandtl,
        solid=solid_mask(config.geometry, config.grid),
    )


def sample_inputs_hash(config: ExperimentConfig, split: str, index: int, seed: int) -> str:
    """Hash of everything that determines a sample's bytes.

    Deliberately excludes training, hybrid, and output settings: a
    dataset is reusable across those.
    """
    d = config.to_dict()
    payload = {
        "schema_version": d["schema_version"],
        "grid": d["grid"],
        "physics": d["physics"],
        "geometry": d["geometry"],
        "boundary": d["boundary"],
        "source": d["source"],
        "reference": d["reference"],
        "split": split,
        "index": index,
        "seed": seed,
    }
    return hashlib.sha256(json_bytes(payload)).hexdigest()


def solve_reference(config: ExperimentConfig, problem):
    tol, max_iter = config.reference.resolved(config.physics.kind)
    if config.physics.kind == "heat":
        T, report = solve_heat(problem, tol=tol, max_iter=max_iter)
        fields = [T]
    else:
        psi, omega, T, report = solve_boussinesq(problem, tol=tol, max_iter=max_iter)
        fields = [psi, omega, T]
    return fields, report, tol


def draw_reference_case(config: ExperimentConfig, base_seed: int) -> dict:
    """One source draw plus its converged reference solve.

    Applies the redraw policy: a draw whose reference solve diverges or
    exhausts its budget is logged and retried at the next stride seed.
    Every consumer of "case at seed s" goes through here, so dataset
    samples, comparisons, and benchmarks agree on which draw a seed
    denotes.
    """
    redraws: List[dict] = []
    for attempt in range(MAX_REDRAWS + 1):
        seed = base_seed + REDRAW_STRIDE * attempt
        spec, source = sample_gmm(
            seed=seed,
            k_min=config.source.k_min,
            k_max=config.source.k_max,
            grid=config.grid,
            support=config.source.support,
            amp_range=(config.source.amp_min, config.source.amp_max),
        )
        problem = build_problem(config, source)
        try:
            fields, report, tol = solve_reference(config, problem)
        except DivergenceError as exc:
            redraws.append({"seed": seed, "reason": str(exc)})
            continue
        if not report.converged:
            redraws.append(
                {"seed": seed, "reason": f"no convergence in {report.iterations} iterations"}
            )
            continue
        return {
            "spec": spec,
            "source": source,
            "problem": problem,
            "fields": fields,
            "report": report,
            "tol": tol,
            "draw_seed": seed,
            "redraws": redraws,
        }
    raise DatasetError(
        f"reference solve failed on {MAX_REDRAWS + 1} draws "
        f"(seeds {[r['seed'] for r in redraws]})"
    )


def generate_sample(config: ExperimentConfig, split: str, index: int) -> dict:
    """Draw, solve, and return everything but the files for one sample."""
    base = config.train_seed(index) if split == "train" else config.test_seed(index)
    try:
        case = draw_reference_case(config, base)
    except DatasetError as exc:
        raise DatasetError(f"{split} sample {index}: {exc}") from None
    record = {
        "kind": config.physics.kind,
        "tol": case["tol"],
        "iterations": case["report"].iterations,
        "converged": True,
        "relative_residual": case["report"].final_residual,
    }
    if config.physics.kind == "heat":
        # independent re-check of the stored solution; convection
        # datasets have no tiny conduction residual to record
        record["heat_residual_norm"] = float(
            np.linalg.norm(heat_residual(case["fields"][0], case["problem"]).values)
        ) / heat_scale(case["problem"])
    return {
        "split": split,
        "index": index,
        "base_seed": base,
        "draw_seed": case["draw_seed"],
        "redraws": case["redraws"],
        "source_spec": case["spec"].to_dict(),
        "solver": record,
        "fields": case["fields"],
        "conditions": condition_fields_from_problem(case["problem"]),
        "inputs_hash": sample_inputs_hash(config, split, index, base),
    }


def sample_dir(root: Path, split: str, index: int) -> Path:
    return Path(root) / split / f"{index:06d}"


def _sample_complete(config: ExperimentConfig, root: Path, split: str, index: int) -> Optional[dict]:
    """Return the stored manifest if this sample exists and matches."""
    sd = sample_dir(root, split, index)
    mp = sd / SAMPLE_MANIFEST
    if not mp.is_file():
        return None
    try:
        manifest = json.loads(mp.read_text())
    except (OSError, json.JSONDecodeError):
        return None
    base = config.train_seed(index) if split == "train" else config.test_seed(index)
    if manifest.get("inputs_hash") != sample_inputs_hash(config, split, index, base):
        return None
    for name in manifest.get("files", []):
        if not (sd / name).is_file():
            return None
    return manifest


def write_sample(config: ExperimentConfig, root: Path, sample: dict) -> dict:
    """Persist one generated sample atomically; returns its manifest."""
    final = sample_dir(root, sample["split"], sample["index"])
    tmp = final.with_name(f"{final.name}.tmp.{os.getpid()}")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)

    files = []
    for role in ("geometry", "source", "boundary"):
        write_field(sample["conditions"][role], tmp / f"{role}.field")
        files.append(f"{role}.field")
    for name, fld in zip(config.var_names, sample["fields"]):
        write_field(fld, tmp / f"{name}.field")
        files.append(f"{name}.field")
    (tmp / "source_spec.json").write_bytes(json_bytes(sample["source_spec"]))
    files.append("source_spec.json")

    manifest = {
        "schema_version": 1,
        "split": sample["split"],
        "index": sample["index"],
        "base_seed": sample["base_seed"],
        "draw_seed": sample["draw_seed"],
        "redraws": sample["redraws"],
        "variables": list(config.var_names),
        "solver": sample["solver"],
        "files": files,
        "inputs_hash": sample["inputs_hash"],
    }
    (tmp / SAMPLE_MANIFEST).write_bytes(json_bytes(manifest))

    if final.exists():
        # only reachable when the stored sample failed the hash check:
        # it belongs to a different configuration, so replace it
        shutil.rmtree(final)
    os.replace(tmp, final)
    return manifest


def _produce(args) -> dict:
    config, root, split, index = args
    manifest = _sample_complete(config, root, split, index)
    if manifest is not None:
        return manifest
    return write_sample(config, root, generate_sample(config, split, index))


def generate_dataset(config: ExperimentConfig, root) -> Path:
    """Generate (or resume) the full train/test dataset under ``root``."""
    root = Path(root)
    for split in ("train", "test"):
        (root / split).mkdir(parents=True, exist_ok=True)

    tasks = [(config, root, "train", i) for i in range(config.dataset.n_train)]
    tasks += [(config, root, "test", j) for j in range(config.dataset.n_test)]
    workers = _workers(len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            manifests = list(pool.map(_produce, tasks, chunksize=1))
    else:
        manifests = [_produce(t) for t in tasks]

    by_split: Dict[str, list] = {"train": [], "test": []}
    for m in manifests:
        by_split[m["split"]].append(
            {
                "index": m["index"],
                "dir": f"{m['split']}/{m['index']:06d}",
                "base_seed": m["base_seed"],
                "draw_seed": m["draw_seed"],
                "inputs_hash": m["inputs_hash"],
            }
        )
    for entries in by_split.values():
        entries.sort(key=lambda e: e["index"])

    write_json(
        root / MANIFEST,
        {
            "schema_version": 1,
            "config": config.echo_dict(),
            "n_train": config.dataset.n_train,
            "n_test": config.dataset.n_test,
            "seed_policy": {
                "train": "seed + index",
                "test": f"seed + {1_000_000} + index",
                "redraw": f"draw + {REDRAW_STRIDE} * attempt, max {MAX_REDRAWS} redraws",
            },
            "samples": by_split,
            "complete": True,
        },
    )
    return root


# -- reading ---------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class LoadedSample:
    index: int
    split: str
    manifest: dict
    conditions: Dict[str, ScalarField]
    fields: List[ScalarField]


def load_manifest(root) -> dict:
    mp = Path(root) / MANIFEST
    if not mp.is_file():
        raise DatasetError(f"{root}: no {MANIFEST}; generate the dataset first")
    try:
        manifest = json.loads(mp.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{mp}: unreadable manifest ({exc})") from None
    if not manifest.get("complete"):
        raise DatasetError(f"{root}: dataset marked incomplete")
    return manifest


def check_dataset_matches(config: ExperimentConfig, manifest: dict) -> None:
    """The sample-determining parts of the config must agree."""
    stored = manifest.get("config", {})
    current = config.echo_dict()
    for key in ("grid", "physics", "geometry", "boundary", "source", "reference", "dataset"):
        if stored.get(key) != current.get(key):
            raise DatasetError(
                f"dataset was generated with different {key!r} settings; "
                f"regenerate it or fix the config"
            )


def load_sample(config: ExperimentConfig, root, split: str, index: int) -> LoadedSample:
    sd = sample_dir(Path(root), split, index)
    mp = sd / SAMPLE_MANIFEST
    if not mp.is_file():
        raise DatasetError(f"missing sample {split}/{index:06d} under {root}")
    manifest = json.loads(mp.read_text())
    grid = config.grid

    def fld(name):
        f = read_field(sd / f"{name}.field", lx=grid.lx, ly=grid.ly, origin=grid.origin)
        if f.grid.shape != grid.shape:
            raise DatasetError(
                f"{sd}: stored field {name} is {f.grid.nx}x{f.grid.ny}, config wants "
                f"{grid.nx}x{grid.ny}"
            )
        return f

    conditions = {role: fld(role) for role in ("geometry", "source", "boundary")}
    fields = [fld(name) for name in manifest["variables"]]
    return LoadedSample(index, split, manifest, conditions, fields)


def load_split(config: ExperimentConfig, root, split: str) -> List[LoadedSample]:
    n = config.dataset.n_train if split == "train" else config.dataset.n_test
    return [load_sample(config, root, split, i) for i in range(n)]
