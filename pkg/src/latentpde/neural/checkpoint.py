"""Model checkpoints.

Layout: magic ``LPNN``, u32 little-endian header length, a UTF-8 JSON
header, then every parameter array as little-endian float64 in layer
order (weights before biases). The header records the architecture, the
input dims, the init seed, the payload element count, and a CRC32 of
the payload bytes, so a corrupted or truncated file is rejected with
the byte offset of the problem rather than loaded partially.
"""

from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from ..errors import FormatError
from . import layers as L
from .network import ModelParams

_MAGIC = b"LPNN"
_LEN = struct.Struct("<I")
_VERSION = 1


def _payload(model: ModelParams) -> bytes:
    parts = []
    for p in model.weights:
        if p is None:
            continue
        parts.append(np.ascontiguousarray(p["w"], dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(p["b"], dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(model: ModelParams, path) -> None:
    path = os.fspath(path)
    payload = _payload(model)
    header = {
        "version": _VERSION,
        "architecture": [L.spec_to_dict(s) for s in model.layers],
        "input_dims": list(model.input_dims),
        "init_seed": model.init_seed,
        "payload_count": len(payload) // 8,
        "crc32": zlib.crc32(payload) & 0xFFFFFFFF,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_LEN.pack(len(blob)))
        fh.write(blob)
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path) -> ModelParams:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    if raw[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}", offset=0)
    (hlen,) = _LEN.unpack_from(raw, 4)
    if len(raw) < 8 + hlen:
        raise FormatError(f"{path}: truncated header block", offset=4)
    try:
        header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})", offset=8) from None
    for key in ("architecture", "input_dims", "init_seed", "payload_count", "crc32"):
        if key not in header:
            raise FormatError(f"{path}: header missing {key!r}", offset=8)
    payload = raw[8 + hlen :]
    count = int(header["payload_count"])
    if len(payload) != 8 * count:
        raise FormatError(
            f"{path}: expected {8 * count} payload bytes, found {len(payload)}",
            offset=8 + hlen,
        )
    if (zlib.crc32(payload) & 0xFFFFFFFF) != int(header["crc32"]):
        raise FormatError(f"{path}: payload checksum mismatch", offset=8 + hlen)
    try:
        specs = tuple(L.spec_from_dict(d) for d in header["architecture"])
    except Exception as exc:
        raise FormatError(f"{path}: bad architecture ({exc})", offset=8) from None
    input_dims = tuple(int(d) for d in header["input_dims"])

    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if count and not np.isfinite(values).all():
        first = int(np.flatnonzero(~np.isfinite(values))[0])
        raise FormatError(f"{path}: non-finite parameter", offset=8 + hlen + 8 * first)

    # rebuild shapes by walking the architecture, then fill from payload
    skeleton = []
    dims = input_dims
    rng = np.random.default_rng(0)
    for spec in specs:
        skeleton.append(L.init_params(spec, dims, rng))
        dims = L.output_dims(spec, dims)
    weights, pos = [], 0
    for p in skeleton:
        if p is None:
            weights.append(None)
            continue
        entry = {}
        for key in ("w", "b"):
            n = p[key].size
            if pos + n > count:
                raise FormatError(f"{path}: payload shorter than architecture", offset=8 + hlen)
            entry[key] = values[pos : pos + n].reshape(p[key].shape).copy()
            pos += n
        weights.append(entry)
    if pos != count:
        raise FormatError(f"{path}: payload longer than architecture", offset=8 + hlen + 8 * pos)
    return ModelParams(specs, weights, input_dims, int(header["init_seed"]))
