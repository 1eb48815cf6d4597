"""Experiment harness: config-driven dataset generation, training,
solving, comparison, and benchmarking, plus the CLI on top."""

from .commands import (
    ComparisonMetrics,
    cmd_bench,
    cmd_compare,
    cmd_gen_data,
    cmd_solve,
    cmd_train,
    compare_case,
    field_errors,
    resolve_source,
)
from .config import (
    MAX_REDRAWS,
    REDRAW_STRIDE,
    SCHEMA_VERSION,
    TEST_SEED_OFFSET,
    DatasetSpec,
    ExperimentConfig,
    LatentSpec,
    PhysicsSpec,
    ReferenceSpec,
    SourceRanges,
)
from .dataset import (
    LoadedSample,
    build_problem,
    check_dataset_matches,
    draw_reference_case,
    generate_dataset,
    load_manifest,
    load_sample,
    load_split,
)

__all__ = [
    "ComparisonMetrics",
    "DatasetSpec",
    "ExperimentConfig",
    "LatentSpec",
    "LoadedSample",
    "MAX_REDRAWS",
    "PhysicsSpec",
    "REDRAW_STRIDE",
    "ReferenceSpec",
    "SCHEMA_VERSION",
    "SourceRanges",
    "TEST_SEED_OFFSET",
    "build_problem",
    "check_dataset_matches",
    "cmd_bench",
    "cmd_compare",
    "cmd_gen_data",
    "cmd_solve",
    "cmd_train",
    "compare_case",
    "draw_reference_case",
    "field_errors",
    "generate_dataset",
    "load_manifest",
    "load_sample",
    "load_split",
    "resolve_source",
]
