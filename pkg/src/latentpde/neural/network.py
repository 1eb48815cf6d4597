"""Model container plus tape-based forward/backward passes.

A model is an ordered layer list with one parameter dict per parametric
layer, built deterministically from a seed. Forward returns the output
together with a tape of per-layer caches; backward replays the tape in
reverse and produces gradients congruent to the parameter list plus the
gradient with respect to the input.

Tapes are tied to the parameter state they were recorded against via a
monotonically increasing token. Optimizer steps produce a model with a
new token, so running backward with a tape recorded before the update
raises InvalidStateError instead of silently mixing states.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..errors import DimensionError, InvalidStateError
from . import layers as L

_token_counter = itertools.count(1)


@dataclass
class ModelParams:
    """Layer specs, their parameters, and the input signature.

    ``weights[i]`` is None for parameter-free layers and a {"w", "b"}
    dict otherwise. Treat instances as immutable during inference; the
    optimizer returns fresh instances rather than mutating.
    """

    layers: Tuple
    weights: List[Optional[dict]]
    input_dims: Tuple[int, int, int]
    init_seed: int
    token: int = field(default_factory=lambda: next(_token_counter))

    @property
    def output_dims(self) -> Tuple[int, int, int]:
        dims = self.input_dims
        for spec in self.layers:
            dims = L.output_dims(spec, dims)
        return dims

    def parameter_count(self) -> int:
        return sum(p["w"].size + p["b"].size for p in self.weights if p is not None)


@dataclass
class Tape:
    token: int
    caches: list


def build_model(layer_specs, input_dims: Tuple[int, int, int], init_seed: int) -> ModelParams:
    """Validate the layer chain against ``input_dims`` and initialize.

    Weights are Xavier-uniform from a single generator seeded with
    ``init_seed``, drawn in layer order, so the full parameter state is
    a pure function of (architecture, input_dims, seed).
    """
    specs = tuple(layer_specs)
    rng = np.random.default_rng(init_seed)
    weights = []
    dims = tuple(int(d) for d in input_dims)
    for spec in specs:
        weights.append(L.init_params(spec, dims, rng))
        dims = L.output_dims(spec, dims)
    return ModelParams(specs, weights, tuple(int(d) for d in input_dims), int(init_seed))


def forward(model: ModelParams, x: np.ndarray) -> Tuple[np.ndarray, Tape]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise DimensionError(f"forward expects (B, C, H, W), got shape {x.shape}")
    if tuple(x.shape[1:]) != model.input_dims:
        raise DimensionError(
            f"model expects input dims {model.input_dims}, got {tuple(x.shape[1:])}"
        )
    caches = []
    for spec, params in zip(model.layers, model.weights):
        x, cache = L.layer_forward(spec, params, x)
        caches.append(cache)
    return x, Tape(model.token, caches)


def backward(model: ModelParams, tape: Tape, output_grad: np.ndarray):
    """Reverse-mode pass; returns (parameter gradients, input gradient)."""
    if tape.token != model.token:
        raise InvalidStateError(
            "tape does not match this parameter state; re-run forward after updates"
        )
    if len(tape.caches) != len(model.layers):
        raise InvalidStateError("tape layer count does not match the model")
    gy = np.asarray(output_grad, dtype=np.float64)
    grads: List[Optional[dict]] = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        g, gy = L.layer_backward(model.layers[i], model.weights[i], tape.caches[i], gy)
        grads[i] = g
    return grads, gy


def predict(model: ModelParams, x: np.ndarray) -> np.ndarray:
    """Forward pass without keeping the tape."""
    return forward(model, x)[0]
