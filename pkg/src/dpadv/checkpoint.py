"""Model checkpoint file format.

Layout (all integers little-endian unsigned 32-bit)::

    8 bytes   magic b"DPADVCKP"
    u32       format version (1)
    u32       number of layer dims L+1
    u32 x L+1 layer dims
    u8  x L   activation codes (0 identity, 1 relu)
    f64 x P   parameters, little-endian IEEE-754 doubles
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .nn import Model, param_count

MAGIC = b"DPADVCKP"
VERSION = 1
_ACT_CODES = {"identity": 0, "relu": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


class CheckpointError(ValueError):
    pass


def dumps(model: Model) -> bytes:
    head = MAGIC + struct.pack("<II", VERSION, len(model.dims))
    head += struct.pack(f"<{len(model.dims)}I", *model.dims)
    head += bytes(_ACT_CODES[a] for a in model.activations)
    return head + model.params.astype("<f8").tobytes()


def loads(raw: bytes) -> Model:
    if raw[:8] != MAGIC:
        raise CheckpointError("not a dpadv checkpoint (bad magic)")
    if len(raw) < 16:
        raise CheckpointError("truncated header")
    version, n_dims = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 16
    n_acts = n_dims - 1
    if n_dims < 2 or len(raw) < off + 4 * n_dims + n_acts:
        raise CheckpointError("truncated header")
    dims = struct.unpack(f"<{n_dims}I", raw[off:off + 4 * n_dims])
    off += 4 * n_dims
    try:
        acts = tuple(_ACT_NAMES[b] for b in raw[off:off + n_acts])
    except KeyError as exc:
        raise CheckpointError(f"unknown activation code {exc.args[0]}") from None
    off += n_acts
    expected = 8 * param_count(dims)
    if len(raw) - off != expected:
        raise CheckpointError(f"expected {expected} parameter bytes, found {len(raw) - off}")
    params = np.frombuffer(raw[off:], dtype="<f8").astype(np.float64)
    return Model(dims, acts, params)


def save(model: Model, path) -> None:
    Path(path).write_bytes(dumps(model))


def load(path) -> Model:
    return loads(Path(path).read_bytes())
