"""Binary checkpoint format.

Layout: magic ``LSEGCKPT``, uint32 format version, uint32 header length,
UTF-8 JSON header (layer specs + metadata), uint32 tensor count, then per
tensor a uint32 rank, uint32 extents and the little-endian float64 payload.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .layers import LayerSpec, ShapeError, param_shapes
from .model import Model

MAGIC = b"LSEGCKPT"
VERSION = 1


class CheckpointError(ValueError):
    """Corrupt, truncated or incompatible checkpoint file."""


def save_checkpoint(model: Model, path: str) -> None:
    header = json.dumps(
        {"specs": [s.to_dict() for s in model.specs], "meta": model.meta}, sort_keys=True
    ).encode("utf-8")
    tensors = model.parameters()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(tensors)))
        for t in tensors:
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count=1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals if count != 1 else vals[0]


def load_checkpoint(path: str, specs: list[LayerSpec] | None = None) -> Model:
    """Load a model; if ``specs`` is given the stored tensors must fit it."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    try:
        header = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    stored_specs = [LayerSpec.from_dict(d) for d in header["specs"]]
    flat = []
    for _ in range(r.u32()):
        ndim = r.u32()
        shape = tuple(r.u32(ndim)) if ndim != 1 else (r.u32(),)
        count = int(np.prod(shape)) if shape else 1
        flat.append(np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).copy())
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    target = stored_specs if specs is None else list(specs)
    params, it = [], iter(flat)
    for spec in target:
        group = []
        for shape in param_shapes(spec):
            t = next(it, None)
            if t is None or t.shape != shape:
                raise ShapeError(
                    f"checkpoint tensor {None if t is None else t.shape} does not fit {spec}"
                )
            group.append(t)
        params.append(group)
    if next(it, None) is not None:
        raise ShapeError("checkpoint holds more tensors than the layer list needs")
    return Model(target, params, meta=header["meta"])
