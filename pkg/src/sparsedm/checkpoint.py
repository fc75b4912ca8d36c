"""Binary checkpoint container.

Layout (all integers little-endian):

    offset  size       field
    0       4          magic bytes "SDMC"
    4       2          format version (u16), currently 1
    6       8          training step (u64)
    14      4          record count (u32)
    18      ...        records, back to back

Each record describes one named parameter tensor:

    u16                name length in bytes
    bytes              name, UTF-8 (e.g. "fc1.weight")
    u8                 ndim
    ndim * u32         shape extents
    n * f64            values, C order
    ceil(n / 8) bytes  active-position bitset, little bit order
    n * f64            first Adam moment
    n * f64            second Adam moment

Never-masked tensors (biases, dense runs) store an all-ones bitset. A
load followed by a save reproduces the file byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    CheckpointError,
    TruncatedCheckpointError,
    UnsupportedVersionError,
)
from .models import ParamRegistry
from .topology import SparsityMask
from .training import OptimizerState

MAGIC = b"SDMC"
VERSION = 1


@dataclass
class ParamRecord:
    name: str
    values: np.ndarray
    mask: np.ndarray
    m: np.ndarray
    v: np.ndarray


@dataclass
class Checkpoint:
    step: int
    records: dict[str, ParamRecord]


def _pack_bits(mask: np.ndarray) -> bytes:
    return np.packbits(mask.ravel().astype(np.uint8), bitorder="little").tobytes()


def _unpack_bits(buf: bytes, shape: tuple[int, ...]) -> np.ndarray:
    n = int(np.prod(shape)) if shape else 1
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), count=n, bitorder="little")
    return bits.astype(bool).reshape(shape)


def save_checkpoint(
    registry: ParamRegistry,
    mask: SparsityMask | None,
    state: OptimizerState,
    path: str | Path,
) -> None:
    chunks: list[bytes] = [MAGIC, struct.pack("<HQ", VERSION, state.step)]
    records: list[bytes] = []
    for entry in registry.entries:
        for suffix, tensor in (("weight", entry.weight), ("bias", entry.bias)):
            if tensor is None:
                continue
            name = f"{entry.layer_id}.{suffix}"
            data = tensor.data
            if suffix == "weight" and entry.maskable and mask is not None:
                bits = mask.bits[entry.layer_id]
            else:
                bits = np.ones(data.shape, dtype=bool)
            name_b = name.encode("utf-8")
            rec = [
                struct.pack("<H", len(name_b)),
                name_b,
                struct.pack("<B", data.ndim),
                struct.pack(f"<{data.ndim}I", *data.shape),
                np.ascontiguousarray(data, dtype="<f8").tobytes(),
                _pack_bits(bits),
                np.ascontiguousarray(state.m[name], dtype="<f8").tobytes(),
                np.ascontiguousarray(state.v[name], dtype="<f8").tobytes(),
            ]
            records.append(b"".join(rec))
    chunks.append(struct.pack("<I", len(records)))
    chunks.extend(records)
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(
                f"file ends at byte {len(self.buf)}, needed {self.pos + n}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    r = _Reader(path.read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise BadMagicError(f"{path} is not a checkpoint (bad magic bytes)")
    (version, step) = r.unpack("<HQ")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: format version {version}, expected {VERSION}")
    (count,) = r.unpack("<I")
    records: dict[str, ParamRecord] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = tuple(r.unpack(f"<{ndim}I")) if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).copy()
        bits = _unpack_bits(r.take((n + 7) // 8), shape)
        m = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).copy()
        v = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).copy()
        if name in records:
            raise CheckpointError(f"{path}: duplicate record {name!r}")
        records[name] = ParamRecord(name=name, values=values, mask=bits, m=m, v=v)
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: {len(r.buf) - r.pos} trailing bytes after last record")
    return Checkpoint(step=int(step), records=records)


def restore(
    ckpt: Checkpoint, registry: ParamRegistry, state: OptimizerState
) -> SparsityMask | None:
    """Load checkpoint contents into a freshly built model and optimizer.

    Returns the mask carried by the maskable layers (None if the model has
    no maskable layers at all); whether to use it is the caller's call, a
    dense run simply ignores it.
    """
    bits: dict[str, np.ndarray] = {}
    for entry in registry.entries:
        for suffix, tensor in (("weight", entry.weight), ("bias", entry.bias)):
            if tensor is None:
                continue
            name = f"{entry.layer_id}.{suffix}"
            rec = records_get(ckpt, name)
            if rec.values.shape != tensor.data.shape:
                raise CheckpointError(
                    f"record {name!r} has shape {rec.values.shape}, model expects {tensor.data.shape}"
                )
            tensor.data[...] = rec.values
            state.m[name][...] = rec.m
            state.v[name][...] = rec.v
            if suffix == "weight" and entry.maskable:
                bits[entry.layer_id] = rec.mask.copy()
    state.step = ckpt.step
    return SparsityMask(bits) if bits else None


def records_get(ckpt: Checkpoint, name: str) -> ParamRecord:
    try:
        return ckpt.records[name]
    except KeyError:
        raise CheckpointError(f"checkpoint has no record {name!r}") from None
