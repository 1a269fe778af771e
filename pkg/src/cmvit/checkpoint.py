"""Binary checkpoint format.

Layout (all integers little-endian u32)::

    b"CMVK" | version | header length | header JSON (sorted keys, compact)
    | record count | records...

The header holds ``{"config": {...}, "dtype": "float32"|"float64"}``. Each
record is ``name length | name (utf-8) | rank | extents... | raw values``
with values stored little-endian in the header dtype. Records list the
parameters first, then batch-norm running statistics.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError
from .models import Classifier, ModelConfig, build_model
from .tensor import precision

MAGIC = b"CMVK"
VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def _state(model: Classifier) -> list[tuple[str, np.ndarray]]:
    return [(n, p.data) for n, p in model.named_parameters()] + list(model.named_buffers())


def serialize(model: Classifier) -> bytes:
    dtype = model.parameters()[0].dtype.name
    header = json.dumps({"config": model.cfg.to_dict(), "dtype": dtype}, sort_keys=True, separators=(",", ":"))
    hbytes = header.encode("utf-8")
    state = _state(model)
    parts = [MAGIC, struct.pack("<II", VERSION, len(hbytes)), hbytes, struct.pack("<I", len(state))]
    for name, arr in state:
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())
    return b"".join(parts)


def save_checkpoint(model: Classifier, path: str | Path) -> None:
    Path(path).write_bytes(serialize(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def deserialize(data: bytes) -> Classifier:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic bytes)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(r.take(r.u32()).decode("utf-8"))
        cfg = ModelConfig.from_dict(header["config"])
        dtype = header["dtype"]
        wire = _DTYPES[dtype]
    except (ValueError, KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from None

    with precision(dtype):
        model = build_model(cfg)
    expected = _state(model)
    count = r.u32()
    if count != len(expected):
        raise CheckpointError(f"checkpoint has {count} tensors, config implies {len(expected)}")
    for name, target in expected:
        got = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        if got != name or shape != target.shape:
            raise CheckpointError(
                f"tensor mismatch: file has {got} {list(shape)}, config expects {name} {list(target.shape)}"
            )
        nbytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(wire).itemsize
        target[...] = np.frombuffer(r.take(nbytes), dtype=wire).reshape(shape)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after last record")
    return model


def load_checkpoint(path: str | Path) -> Classifier:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from None
    return deserialize(data)
