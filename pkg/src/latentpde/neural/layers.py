"""Layer definitions and their forward/backward math.

Everything operates on 4-D arrays shaped (batch, channels, height,
width), float64 throughout. Convolutions use zero "same" padding, so a
stride-1 conv preserves spatial dims and a stride-2 conv produces
ceil(n/2); zero padding at the borders is deliberate, since border
pixels carry boundary-condition information and must not wrap.

Each layer kind is a frozen spec dataclass plus a pair of pure
functions. The forward returns (output, cache) and the backward
consumes that cache; no layer stores state of its own. Parametric
layers keep their arrays in a dict with keys "w" and "b".
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..errors import DimensionError, InvalidSpecError


# ---------------------------------------------------------------------------
# layer specs


@dataclass(frozen=True)
class Conv:
    """3x3-style convolution, stride 1 or 2, same padding."""

    out_channels: int
    kernel: int = 3
    stride: int = 1

    def __post_init__(self):
        if self.out_channels < 1:
            raise InvalidSpecError(f"conv needs out_channels >= 1, got {self.out_channels}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise InvalidSpecError(f"conv kernel must be odd and positive, got {self.kernel}")
        if self.stride not in (1, 2):
            raise InvalidSpecError(f"conv stride must be 1 or 2, got {self.stride}")


@dataclass(frozen=True)
class TransposedConv:
    """Adjoint of a same-padded conv; upsamples by its stride.

    The output height defaults to stride*h, which a paired stride-s conv
    maps straight back to h. Odd extents (17 -> 9 under stride 2) are
    not invertible from the small side alone, so ``out_hw`` pins the
    target shape explicitly; it must satisfy ceil(out/stride) == in.
    """

    out_channels: int
    kernel: int = 3
    stride: int = 2
    out_hw: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if self.out_channels < 1:
            raise InvalidSpecError(f"needs out_channels >= 1, got {self.out_channels}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise InvalidSpecError(f"kernel must be odd and positive, got {self.kernel}")
        if self.stride < 1:
            raise InvalidSpecError(f"stride must be >= 1, got {self.stride}")


@dataclass(frozen=True)
class Dense:
    """Fully connected layer on (batch, dim, 1, 1) tensors."""

    out_dim: int

    def __post_init__(self):
        if self.out_dim < 1:
            raise InvalidSpecError(f"dense needs out_dim >= 1, got {self.out_dim}")


@dataclass(frozen=True)
class Activation:
    name: str  # "tanh" | "relu" | "identity"

    def __post_init__(self):
        if self.name not in ("tanh", "relu", "identity"):
            raise InvalidSpecError(f"unknown activation {self.name!r}")


@dataclass(frozen=True)
class Flatten:
    """(B, C, H, W) -> (B, C*H*W, 1, 1)."""


@dataclass(frozen=True)
class Reshape:
    """(B, D, 1, 1) -> (B, *dims); element count must match."""

    dims: Tuple[int, int, int]

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise InvalidSpecError(f"reshape dims must be 3 positive ints, got {self.dims!r}")


def _require4(x, where: str):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise DimensionError(f"{where}: expected a 4-d (B,C,H,W) array, got shape {x.shape}")
    return x


# ---------------------------------------------------------------------------
# convolution primitives
#
# A same-padded conv with odd kernel k, pad (k-1)//2 and stride s maps
# height H to floor((H-1)/s) + 1 == ceil(H/s). The three helpers below
# are the forward map, its weight gradient, and its input gradient;
# transposed conv reuses them with the roles of input and output
# swapped, which makes it the exact adjoint by construction.


def conv_out_hw(hw: Tuple[int, int], stride: int) -> Tuple[int, int]:
    return (-(-hw[0] // stride), -(-hw[1] // stride))


def _conv_fwd(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    k = w.shape[2]
    p = (k - 1) // 2
    b, _, h, wd = x.shape
    oh, ow = conv_out_hw((h, wd), stride)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((b, w.shape[0], oh, ow))
    for di in range(k):
        for dj in range(k):
            win = xp[:, :, di : di + stride * oh : stride, dj : dj + stride * ow : stride]
            out += np.einsum("oi,bihw->bohw", w[:, :, di, dj], win, optimize=True)
    return out


def _conv_grad_w(x: np.ndarray, gy: np.ndarray, stride: int, k: int) -> np.ndarray:
    p = (k - 1) // 2
    oh, ow = gy.shape[2], gy.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    gw = np.zeros((gy.shape[1], x.shape[1], k, k))
    for di in range(k):
        for dj in range(k):
            win = xp[:, :, di : di + stride * oh : stride, dj : dj + stride * ow : stride]
            gw[:, :, di, dj] = np.einsum("bohw,bihw->oi", gy, win, optimize=True)
    return gw


def _conv_grad_x(gy: np.ndarray, w: np.ndarray, stride: int, in_hw: Tuple[int, int]) -> np.ndarray:
    k = w.shape[2]
    p = (k - 1) // 2
    h, wd = in_hw
    oh, ow = gy.shape[2], gy.shape[3]
    gxp = np.zeros((gy.shape[0], w.shape[1], h + 2 * p, wd + 2 * p))
    for di in range(k):
        for dj in range(k):
            # for a fixed offset the strided window hits distinct cells,
            # so in-place += on the view is safe
            gxp[:, :, di : di + stride * oh : stride, dj : dj + stride * ow : stride] += np.einsum(
                "oi,bohw->bihw", w[:, :, di, dj], gy, optimize=True
            )
    if p == 0:
        return gxp
    return gxp[:, :, p:-p, p:-p]


# ---------------------------------------------------------------------------
# layer forward/backward dispatch


def conv_forward(spec: Conv, params, x):
    x = _require4(x, "conv")
    if x.shape[1] != params["w"].shape[1]:
        raise DimensionError(
            f"conv expects {params['w'].shape[1]} input channels, got {x.shape[1]}"
        )
    y = _conv_fwd(x, params["w"], spec.stride) + params["b"][None, :, None, None]
    return y, x


def conv_backward(spec: Conv, params, cache, gy):
    x = cache
    gw = _conv_grad_w(x, gy, spec.stride, spec.kernel)
    gb = gy.sum(axis=(0, 2, 3))
    gx = _conv_grad_x(gy, params["w"], spec.stride, (x.shape[2], x.shape[3]))
    return {"w": gw, "b": gb}, gx


def tconv_out_hw(spec: TransposedConv, in_hw: Tuple[int, int]) -> Tuple[int, int]:
    out = spec.out_hw if spec.out_hw is not None else (spec.stride * in_hw[0], spec.stride * in_hw[1])
    if conv_out_hw(out, spec.stride) != tuple(in_hw):
        raise DimensionError(
            f"transposed conv output {out} does not map back to input {tuple(in_hw)} "
            f"under stride {spec.stride}"
        )
    return out


def tconv_forward(spec: TransposedConv, params, x):
    # weight is stored conv-style as (in_ch, out_ch, k, k): the layer is
    # literally the adjoint of conv_forward with that weight
    x = _require4(x, "transposed conv")
    if x.shape[1] != params["w"].shape[0]:
        raise DimensionError(
            f"transposed conv expects {params['w'].shape[0]} input channels, got {x.shape[1]}"
        )
    out_hw = tconv_out_hw(spec, (x.shape[2], x.shape[3]))
    y = _conv_grad_x(x, params["w"], spec.stride, out_hw) + params["b"][None, :, None, None]
    return y, x


def tconv_backward(spec: TransposedConv, params, cache, gy):
    x = cache
    gw = _conv_grad_w(gy, x, spec.stride, spec.kernel)
    gb = gy.sum(axis=(0, 2, 3))
    gx = _conv_fwd(gy, params["w"], spec.stride)
    return {"w": gw, "b": gb}, gx


def dense_forward(spec: Dense, params, x):
    x = _require4(x, "dense")
    if x.shape[2] != 1 or x.shape[3] != 1:
        raise DimensionError(f"dense expects (B, D, 1, 1), got shape {x.shape}")
    if x.shape[1] != params["w"].shape[1]:
        raise DimensionError(f"dense expects dim {params['w'].shape[1]}, got {x.shape[1]}")
    flat = x[:, :, 0, 0]
    y = flat @ params["w"].T + params["b"]
    return y[:, :, None, None], flat


def dense_backward(spec: Dense, params, cache, gy):
    flat = cache
    g = gy[:, :, 0, 0]
    gw = g.T @ flat
    gb = g.sum(axis=0)
    gx = g @ params["w"]
    return {"w": gw, "b": gb}, gx[:, :, None, None]


def activation_forward(spec: Activation, params, x):
    x = _require4(x, "activation")
    if spec.name == "tanh":
        y = np.tanh(x)
        return y, y
    if spec.name == "relu":
        return np.maximum(x, 0.0), x
    return x, None


def activation_backward(spec: Activation, params, cache, gy):
    if spec.name == "tanh":
        return None, gy * (1.0 - cache * cache)
    if spec.name == "relu":
        return None, np.where(cache > 0.0, gy, 0.0)
    return None, gy


def flatten_forward(spec: Flatten, params, x):
    x = _require4(x, "flatten")
    b = x.shape[0]
    return x.reshape(b, -1, 1, 1), x.shape


def flatten_backward(spec: Flatten, params, cache, gy):
    return None, gy.reshape(cache)


def reshape_forward(spec: Reshape, params, x):
    x = _require4(x, "reshape")
    c, h, w = spec.dims
    if x[0].size != c * h * w:
        raise DimensionError(
            f"reshape to {spec.dims} needs {c * h * w} values per sample, got {x[0].size}"
        )
    return x.reshape(x.shape[0], c, h, w), x.shape


def reshape_backward(spec: Reshape, params, cache, gy):
    return None, gy.reshape(cache)


_FORWARD = {
    Conv: conv_forward,
    TransposedConv: tconv_forward,
    Dense: dense_forward,
    Activation: activation_forward,
    Flatten: flatten_forward,
    Reshape: reshape_forward,
}

_BACKWARD = {
    Conv: conv_backward,
    TransposedConv: tconv_backward,
    Dense: dense_backward,
    Activation: activation_backward,
    Flatten: flatten_backward,
    Reshape: reshape_backward,
}


def layer_forward(spec, params, x):
    return _FORWARD[type(spec)](spec, params, x)


def layer_backward(spec, params, cache, gy):
    return _BACKWARD[type(spec)](spec, params, cache, gy)


# ---------------------------------------------------------------------------
# shape walking and initialization


def output_dims(spec, in_dims: Tuple[int, int, int]) -> Tuple[int, int, int]:
    """Dims (C, H, W) a single layer produces from ``in_dims``."""
    c, h, w = in_dims
    if isinstance(spec, Conv):
        oh, ow = conv_out_hw((h, w), spec.stride)
        return (spec.out_channels, oh, ow)
    if isinstance(spec, TransposedConv):
        oh, ow = tconv_out_hw(spec, (h, w))
        return (spec.out_channels, oh, ow)
    if isinstance(spec, Dense):
        if (h, w) != (1, 1):
            raise DimensionError(f"dense expects (D, 1, 1) input dims, got {in_dims}")
        return (spec.out_dim, 1, 1)
    if isinstance(spec, Activation):
        return in_dims
    if isinstance(spec, Flatten):
        return (c * h * w, 1, 1)
    if isinstance(spec, Reshape):
        if c * h * w != spec.dims[0] * spec.dims[1] * spec.dims[2]:
            raise DimensionError(f"reshape {in_dims} -> {spec.dims} changes element count")
        return spec.dims
    raise InvalidSpecError(f"unknown layer spec {spec!r}")


def init_params(spec, in_dims: Tuple[int, int, int], rng: np.random.Generator):
    """Xavier-uniform weights, zero biases; None for parameter-free layers."""
    c = in_dims[0]
    if isinstance(spec, Conv):
        k = spec.kernel
        fan_in, fan_out = c * k * k, spec.out_channels * k * k
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-lim, lim, size=(spec.out_channels, c, k, k))
        return {"w": w, "b": np.zeros(spec.out_channels)}
    if isinstance(spec, TransposedConv):
        k = spec.kernel
        fan_in, fan_out = c * k * k, spec.out_channels * k * k
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-lim, lim, size=(c, spec.out_channels, k, k))
        return {"w": w, "b": np.zeros(spec.out_channels)}
    if isinstance(spec, Dense):
        lim = math.sqrt(6.0 / (c + spec.out_dim))
        w = rng.uniform(-lim, lim, size=(spec.out_dim, c))
        return {"w": w, "b": np.zeros(spec.out_dim)}
    return None


_KIND_NAMES = {
    Conv: "conv",
    TransposedConv: "transposed_conv",
    Dense: "dense",
    Activation: "activation",
    Flatten: "flatten",
    Reshape: "reshape",
}


def spec_to_dict(spec) -> dict:
    d = {"kind": _KIND_NAMES[type(spec)]}
    if isinstance(spec, Conv):
        d.update(out_channels=spec.out_channels, kernel=spec.kernel, stride=spec.stride)
    elif isinstance(spec, TransposedConv):
        d.update(out_channels=spec.out_channels, kernel=spec.kernel, stride=spec.stride)
        if spec.out_hw is not None:
            d["out_hw"] = list(spec.out_hw)
    elif isinstance(spec, Dense):
        d.update(out_dim=spec.out_dim)
    elif isinstance(spec, Activation):
        d.update(name=spec.name)
    elif isinstance(spec, Reshape):
        d.update(dims=list(spec.dims))
    return d


def spec_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "conv":
        return Conv(d["out_channels"], d.get("kernel", 3), d.get("stride", 1))
    if kind == "transposed_conv":
        hw = d.get("out_hw")
        return TransposedConv(
            d["out_channels"], d.get("kernel", 3), d.get("stride", 2),
            tuple(hw) if hw is not None else None,
        )
    if kind == "dense":
        return Dense(d["out_dim"])
    if kind == "activation":
        return Activation(d["name"])
    if kind == "flatten":
        return Flatten()
    if kind == "reshape":
        return Reshape(tuple(d["dims"]))
    raise InvalidSpecError(f"unknown layer kind {kind!r}")
