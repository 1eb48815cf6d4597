"""Adam optimizer over the model's parameter list."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..errors import DimensionError
from .network import ModelParams, Tape, _token_counter


@dataclass
class AdamState:
    """Moment estimates congruent to the parameter list.

    ``m`` and ``v`` mirror ModelParams.weights: one {"w", "b"} dict per
    parametric layer, None elsewhere.
    """

    step: int
    m: List[Optional[dict]]
    v: List[Optional[dict]]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(model: ModelParams, lr: float = 1e-3) -> AdamState:
    zeros = lambda p: None if p is None else {k: np.zeros_like(a) for k, a in p.items()}
    return AdamState(0, [zeros(p) for p in model.weights], [zeros(p) for p in model.weights], lr=lr)


def _check_congruent(params, grads, what: str):
    if len(grads) != len(params):
        raise DimensionError(f"{what}: {len(grads)} entries for {len(params)} layers")
    for i, (p, g) in enumerate(zip(params, grads)):
        if (p is None) != (g is None):
            raise DimensionError(f"{what}: layer {i} parametric mismatch")
        if p is None:
            continue
        for key in ("w", "b"):
            if g[key].shape != p[key].shape:
                raise DimensionError(
                    f"{what}: layer {i} {key} shape {g[key].shape} != {p[key].shape}"
                )


def adam_step(model: ModelParams, grads, state: AdamState):
    """One bias-corrected Adam update; returns (new model, new state).

    The input model is left untouched and the returned one carries a
    fresh token, invalidating tapes recorded before the step.
    """
    _check_congruent(model.weights, grads, "adam_step gradients")
    _check_congruent(model.weights, state.m, "adam_step state")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_w, new_m, new_v = [], [], []
    for p, g, m, v in zip(model.weights, grads, state.m, state.v):
        if p is None:
            new_w.append(None)
            new_m.append(None)
            new_v.append(None)
            continue
        pw, mw, vw = {}, {}, {}
        for key in ("w", "b"):
            mk = b1 * m[key] + (1.0 - b1) * g[key]
            vk = b2 * v[key] + (1.0 - b2) * g[key] * g[key]
            step = state.lr * (mk / bc1) / (np.sqrt(vk / bc2) + state.eps)
            pw[key] = p[key] - step
            mw[key] = mk
            vw[key] = vk
        new_w.append(pw)
        new_m.append(mw)
        new_v.append(vw)
    updated = ModelParams(
        model.layers, new_w, model.input_dims, model.init_seed, token=next(_token_counter)
    )
    return updated, AdamState(t, new_m, new_v, state.lr, b1, b2, state.eps)
