"""The five experiment commands behind the CLI.

Each command is a plain function taking an ExperimentConfig, so tests
and scripts can drive them without argument parsing. Outputs land under
``config.out_dir`` unless the caller passes ``out``.

Wall-clock measurements are kept out of the numerical artifacts: solve
summaries, comparison metrics, and manifests are pure functions of
config + seeds, while timings go to ``timings.json`` sidecars (and to
the benchmark report, whose entire point is timing). Re-running a
command therefore reproduces every numerical file byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..autoenc import (
    ConditionSet,
    ModelBundle,
    load_bundle,
    save_bundle,
    train_condition_ae,
    train_solution_ae,
)
from ..conditions import GaussianMixtureSpec, evaluate_gmm, sample_gmm
from ..errors import (
    DimensionError,
    FormatError,
    InvalidSpecError,
    TrainingDivergedError,
    UsageError,
)
from ..fields import ScalarField, read_field, write_field
from ..hybrid import ConvergenceReport, convergence_trace_export, hybrid_solve
from .config import ExperimentConfig
from .dataset import (
    MANIFEST,
    build_problem,
    check_dataset_matches,
    draw_reference_case,
    generate_dataset,
    load_manifest,
    load_split,
    write_json,
    _workers,
)
from .plots import (
    centerline_profile,
    crop_to_rect,
    write_centerline_csv,
    write_grid_csv,
    write_pgm,
)


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(config: ExperimentConfig, out=None) -> Path:
    """Generate (or resume) the dataset; returns its root directory."""
    root = Path(out) if out is not None else config.out_dir / "dataset"
    return generate_dataset(config, root)


# ---------------------------------------------------------------------------
# train


def _write_log_csv(path: Path, log: List[dict]) -> None:
    if not log:
        return
    keys = list(log[0].keys())
    lines = [",".join(keys)]
    for row in log:
        lines.append(",".join(
            f"{row[k]:.17g}" if isinstance(row[k], float) else str(row[k]) for k in keys
        ))
    tmp = path.with_name(f"{path.name}.tmp.{os.getpid()}")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)


def cmd_train(config: ExperimentConfig, dataset_root=None, out=None) -> Path:
    """Train condition autoencoders, then the conditioned solution
    autoencoder, and save the model bundle. Returns the bundle path.

    Training is sequential: the solution autoencoder consumes the frozen
    condition encoders, and a fixed order keeps the run reproducible.
    """
    ds_root = Path(dataset_root) if dataset_root is not None else config.out_dir / "dataset"
    bundle_dir = Path(out) if out is not None else config.out_dir / "bundle"

    manifest = load_manifest(ds_root)
    check_dataset_matches(config, manifest)
    train_samples = load_split(config, ds_root, "train")

    bundle_dir.mkdir(parents=True, exist_ok=True)
    condition_aes = {}
    for role in config.latent.roles:
        fields = [s.conditions[role] for s in train_samples]
        dim = config.latent.role_dim(role, config.grid)
        try:
            ae, log = train_condition_ae(fields, dim, config.condition_train, role)
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(f"condition autoencoder {role!r}: {exc}") from None
        condition_aes[role] = ae
        _write_log_csv(bundle_dir / f"training_log_condition_{role}.csv", log)

    # the residual penalty needs each sample's own stencil, rebuilt from
    # the stored source field
    condition_sets = []
    for s in train_samples:
        problem = build_problem(config, s.conditions["source"])
        if config.physics.kind == "heat":
            condition_sets.append(ConditionSet(fields=s.conditions, heat=problem))
        else:
            condition_sets.append(
                ConditionSet(fields=s.conditions, heat=problem.heat, boussinesq=problem)
            )

    solutions = [s.fields for s in train_samples]
    sol_dim = config.latent.solution_dim(config.grid, len(config.var_names))
    try:
        sol_ae, sol_log = train_solution_ae(
            solutions, condition_aes, condition_sets, sol_dim, config.train,
            config.var_names,
        )
    except TrainingDivergedError as exc:
        raise TrainingDivergedError(f"solution autoencoder: {exc}") from None
    _write_log_csv(bundle_dir / "training_log_solution.csv", sol_log)

    dataset_hash = hashlib.sha256((ds_root / MANIFEST).read_bytes()).hexdigest()
    save_bundle(
        bundle_dir,
        condition_aes,
        sol_ae,
        extra={
            "config": config.echo_dict(),
            "dataset_hash": dataset_hash,
            "n_train": config.dataset.n_train,
            "seed_policy": manifest.get("seed_policy"),
        },
    )
    return bundle_dir


# ---------------------------------------------------------------------------
# solve

# bundles are immutable once written, so worker processes and repeated
# commands share one load per path
_BUNDLE_CACHE: Dict[str, ModelBundle] = {}


def _bundle(path) -> ModelBundle:
    key = str(Path(path))
    if key not in _BUNDLE_CACHE:
        _BUNDLE_CACHE[key] = load_bundle(key)
    return _BUNDLE_CACHE[key]


def resolve_source(
    config: ExperimentConfig, source: Union[int, str, Path]
) -> Tuple[ScalarField, dict, str]:
    """Turn a source designator into a field.

    An integer is an index into the test seed stream; a ``.json`` path
    is a stored Gaussian-mixture spec; any other path is read as a
    binary field file on the config grid. Returns the field, a
    provenance record for the summary, and a tag naming the output
    directory.
    """
    if isinstance(source, (int, np.integer)):
        index = int(source)
        if index < 0:
            raise UsageError(f"source index must be >= 0, got {index}")
        seed = config.test_seed(index)
        spec, fld = evaluate_test_draw(config, seed)
        record = {"kind": "seed", "index": index, "seed": seed, "spec": spec.to_dict()}
        return fld, record, f"seed_{index:06d}"

    path = Path(source)
    if not path.is_file():
        raise UsageError(f"source file not found: {path}")
    if path.suffix == ".json":
        try:
            spec = GaussianMixtureSpec.from_json(path.read_text())
        except (ValueError, KeyError, TypeError, IndexError) as exc:
            raise FormatError(f"{path}: not a mixture spec ({exc})") from None
        fld = evaluate_gmm(spec, config.grid)
        record = {"kind": "spec_file", "path": str(path), "spec": spec.to_dict()}
    else:
        g = config.grid
        fld = read_field(path, lx=g.lx, ly=g.ly, origin=g.origin)
        if fld.grid.shape != g.shape:
            raise DimensionError(
                f"{path}: field is {fld.grid.nx}x{fld.grid.ny}, config grid is {g.nx}x{g.ny}"
            )
        record = {"kind": "field_file", "path": str(path)}
    return fld, record, path.stem


def evaluate_test_draw(config: ExperimentConfig, seed: int):
    """The mixture draw a test seed denotes (no reference solve)."""
    return sample_gmm(
        seed=seed,
        k_min=config.source.k_min,
        k_max=config.source.k_max,
        grid=config.grid,
        support=config.source.support,
        amp_range=(config.source.amp_min, config.source.amp_max),
    )


def cmd_solve(
    config: ExperimentConfig,
    bundle_path,
    source: Union[int, str, Path],
    out=None,
) -> Tuple[Path, ConvergenceReport]:
    """Hybrid-solve one case and write fields, trace, and summary."""
    bundle = _bundle(bundle_path)
    src_field, src_record, tag = resolve_source(config, source)
    out_dir = Path(out) if out is not None else config.out_dir / "solve" / tag
    out_dir.mkdir(parents=True, exist_ok=True)

    problem = build_problem(config, src_field)
    fields, report = hybrid_solve(problem, bundle, config.hybrid)

    files = []
    for name, fld in zip(bundle.solution.var_names, fields):
        write_field(fld, out_dir / f"{name}.field")
        files.append(f"{name}.field")
    convergence_trace_export(report, out_dir / "trace.csv")
    files.append("trace.csv")

    hy = config.to_dict()["hybrid"]
    write_json(
        out_dir / "summary.json",
        {
            "schema_version": 1,
            "source": src_record,
            "hybrid": hy,
            "variables": list(bundle.solution.var_names),
            "iterations": report.iterations,
            "converged": report.converged,
            "final_delta": report.latent_deltas[-1] if report.latent_deltas else None,
            "files": files,
        },
    )
    write_json(
        out_dir / "timings.json",
        {"wall_time_total": report.wall_time_total, "wall_time_init": report.wall_time_init},
    )
    return out_dir, report


# ---------------------------------------------------------------------------
# compare


@dataclasses.dataclass(frozen=True)
class ComparisonMetrics:
    """Hybrid-vs-reference discrepancy for one case."""

    index: int
    mse: Dict[str, float]
    rel_l2: Dict[str, float]
    max_abs: Dict[str, float]
    profiles: Dict[str, np.ndarray]  # var -> rows of (y, hybrid, reference)
    wall_hybrid: float
    wall_reference: float
    iterations: int
    converged: bool

    def __post_init__(self):
        if self.wall_hybrid <= 0.0 or self.wall_reference <= 0.0:
            raise InvalidSpecError("wall times must be positive")

    @property
    def speedup(self) -> float:
        return self.wall_reference / self.wall_hybrid


def field_errors(hybrid: ScalarField, reference: ScalarField) -> Tuple[float, float, float]:
    """(MSE, relative L2, max abs) of hybrid against reference."""
    diff = hybrid.values - reference.values
    mse = float(np.mean(diff**2))
    denom = float(np.linalg.norm(reference.values))
    num = float(np.linalg.norm(diff))
    rel = 0.0 if num == 0.0 else (num / denom if denom > 0.0 else float("inf"))
    return mse, rel, float(np.abs(diff).max())


def compare_case(
    config: ExperimentConfig, bundle: ModelBundle, index: int
) -> Tuple[ComparisonMetrics, dict]:
    """Run both solvers on test case ``index`` and measure the gap."""
    case = draw_reference_case(config, config.test_seed(index))
    ref_fields = case["fields"]
    hyb_fields, report = hybrid_solve(case["problem"], bundle, config.hybrid)

    names = bundle.solution.var_names
    mse, rel, mab, profiles = {}, {}, {}, {}
    for name, h, r in zip(names, hyb_fields, ref_fields):
        mse[name], rel[name], mab[name] = field_errors(h, r)
        ys, hv = centerline_profile(h)
        _, rv = centerline_profile(r)
        profiles[name] = np.column_stack([ys, hv, rv])

    metrics = ComparisonMetrics(
        index=index,
        mse=mse,
        rel_l2=rel,
        max_abs=mab,
        profiles=profiles,
        wall_hybrid=report.wall_time_total,
        wall_reference=case["report"].wall_time,
        iterations=report.iterations,
        converged=report.converged,
    )
    extra = {
        "draw_seed": case["draw_seed"],
        "redraws": case["redraws"],
        "wall_init": report.wall_time_init,
        "hybrid_fields": hyb_fields,
        "reference_fields": ref_fields,
    }
    return metrics, extra


def _chip_rect(config: ExperimentConfig):
    return config.geometry.solids[0].rect if config.geometry.solids else None


def write_case_outputs(
    config: ExperimentConfig,
    out_root: Path,
    metrics: ComparisonMetrics,
    extra: dict,
) -> Path:
    """Emit one case's contour grids, images, profiles, and metrics.

    The directory is built under a temporary name and renamed, so a
    parallel or interrupted run never leaves a half-written case.
    """
    final = out_root / f"case_{metrics.index:06d}"
    tmp = final.with_name(f"{final.name}.tmp.{os.getpid()}")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)

    names = list(metrics.mse.keys())
    pairs = list(zip(names, extra["hybrid_fields"], extra["reference_fields"]))
    for name, h, r in pairs:
        # one gray scale per variable so the two images are comparable
        lo = min(float(h.values.min()), float(r.values.min()))
        hi = max(float(h.values.max()), float(r.values.max()))
        for tag, fld in (("hybrid", h), ("reference", r)):
            write_grid_csv(tmp / f"{tag}_{name}.csv", fld.values)
            write_pgm(tmp / f"{tag}_{name}.pgm", fld.values, lo=lo, hi=hi)
        write_centerline_csv(tmp / f"centerline_{name}.csv", h, r)

    chip = _chip_rect(config)
    if chip is not None and "T" in names:
        t = names.index("T")
        for tag, fld in (("hybrid", extra["hybrid_fields"][t]),
                         ("reference", extra["reference_fields"][t])):
            sub, _ = crop_to_rect(config.grid, fld.values, chip)
            write_grid_csv(tmp / f"{tag}_T_chip.csv", sub)
            write_pgm(tmp / f"{tag}_T_chip.pgm", sub)

    write_json(
        tmp / "metrics.json",
        {
            "schema_version": 1,
            "index": metrics.index,
            "draw_seed": extra["draw_seed"],
            "redraws": extra["redraws"],
            "iterations": metrics.iterations,
            "converged": metrics.converged,
            "errors": {
                n: {"mse": metrics.mse[n], "rel_l2": metrics.rel_l2[n],
                    "max_abs": metrics.max_abs[n]}
                for n in names
            },
        },
    )
    write_json(
        tmp / "timings.json",
        {
            "wall_hybrid": metrics.wall_hybrid,
            "wall_init": extra["wall_init"],
            "wall_reference": metrics.wall_reference,
            "speedup": metrics.speedup,
        },
    )

    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)
    return final


def _compare_worker(args) -> dict:
    config, bundle_path, index, out_root = args
    metrics, extra = compare_case(config, _bundle(bundle_path), index)
    write_case_outputs(config, Path(out_root), metrics, extra)
    return {
        "index": index,
        "mse": metrics.mse,
        "rel_l2": metrics.rel_l2,
        "max_abs": metrics.max_abs,
        "iterations": metrics.iterations,
        "converged": metrics.converged,
        "wall_hybrid": metrics.wall_hybrid,
        "wall_reference": metrics.wall_reference,
    }


def cmd_compare(
    config: ExperimentConfig,
    bundle_path,
    indices: Optional[Sequence[int]] = None,
    out=None,
) -> Tuple[Path, dict]:
    """Compare hybrid vs reference on test cases; write plots + metrics.

    Cases fan out across workers (each case is independent and its
    directory write is atomic); LATENTPDE_THREADS=1 forces the
    sequential path.
    """
    if indices is None:
        indices = range(config.dataset.n_test)
    indices = [int(i) for i in indices]
    if not indices:
        raise UsageError("no comparison cases requested")
    out_root = Path(out) if out is not None else config.out_dir / "compare"
    out_root.mkdir(parents=True, exist_ok=True)

    tasks = [(config, str(bundle_path), i, str(out_root)) for i in indices]
    workers = _workers(len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_compare_worker, tasks, chunksize=1))
    else:
        rows = [_compare_worker(t) for t in tasks]

    names = list(rows[0]["mse"].keys())
    n_conv = sum(1 for r in rows if r["converged"])
    aggregate = {
        "schema_version": 1,
        "indices": indices,
        "n_cases": len(rows),
        "n_converged": n_conv,
        "median_rel_l2": {
            n: float(np.median([r["rel_l2"][n] for r in rows])) for n in names
        },
        "median_mse": {n: float(np.median([r["mse"][n] for r in rows])) for n in names},
        "median_iterations": float(np.median([r["iterations"] for r in rows])),
    }
    write_json(out_root / "compare.json", aggregate)
    hyb = [r["wall_hybrid"] for r in rows]
    ref = [r["wall_reference"] for r in rows]
    write_json(
        out_root / "timings.json",
        {
            "mean_wall_hybrid": float(np.mean(hyb)),
            "mean_wall_reference": float(np.mean(ref)),
            "mean_speedup": float(np.mean(ref) / np.mean(hyb)),
        },
    )
    return out_root, aggregate


# ---------------------------------------------------------------------------
# bench


def cmd_bench(
    config: ExperimentConfig,
    bundle_path,
    n_cases: int = 100,
    out=None,
) -> Tuple[Path, dict]:
    """Time hybrid vs reference over the test seed stream.

    Runs sequentially regardless of worker settings: concurrent solves
    contend for cores and corrupt the very walls being measured. Cases
    whose hybrid solve does not converge are excluded from the timing
    statistics but counted in the report.
    """
    if n_cases < 1:
        raise UsageError(f"n_cases must be >= 1, got {n_cases}")
    bundle = _bundle(bundle_path)
    out_dir = Path(out) if out is not None else config.out_dir / "bench"
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for j in range(n_cases):
        case = draw_reference_case(config, config.test_seed(j))
        _, report = hybrid_solve(case["problem"], bundle, config.hybrid)
        rows.append(
            {
                "index": j,
                "draw_seed": case["draw_seed"],
                "converged": report.converged,
                "iterations": report.iterations,
                "wall_init": report.wall_time_init,
                "wall_hybrid": report.wall_time_total,
                "wall_reference": case["report"].wall_time,
            }
        )

    lines = ["index,draw_seed,converged,iterations,wall_init,wall_hybrid,wall_reference"]
    for r in rows:
        lines.append(
            f"{r['index']},{r['draw_seed']},{int(r['converged'])},{r['iterations']},"
            f"{r['wall_init']:.17g},{r['wall_hybrid']:.17g},{r['wall_reference']:.17g}"
        )
    (out_dir / "bench_cases.csv").write_text("\n".join(lines) + "\n")

    conv = [r for r in rows if r["converged"]]

    def stats(key, sample):
        xs = np.array([r[key] for r in sample], dtype=np.float64)
        return {
            "mean": float(xs.mean()),
            "median": float(np.median(xs)),
            "p95": float(np.percentile(xs, 95)),
        }

    report = {
        "schema_version": 1,
        "n_cases": n_cases,
        "n_converged": len(conv),
        "n_non_converged": n_cases - len(conv),
        "non_converged_indices": [r["index"] for r in rows if not r["converged"]],
        "init_included_in_hybrid": True,
        "hybrid": stats("wall_hybrid", conv) if conv else None,
        "reference": stats("wall_reference", conv) if conv else None,
        "speedup": (
            float(np.mean([r["wall_reference"] for r in conv])
                  / np.mean([r["wall_hybrid"] for r in conv]))
            if conv
            else None
        ),
    }
    write_json(out_dir / "bench.json", report)
    return out_dir, report
