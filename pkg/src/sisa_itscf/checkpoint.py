"""Slice-boundary checkpoints and their binary file format.

Layout (little-endian)::

    b"SISA" | version u16 | shard u16 | stage u16 | cursor 4 x u64
    then per tensor: name_len u16 | name utf-8 | rank u8 | dims u32 x rank | float64 payload
    trailer: FNV-1a 64-bit digest of every preceding byte

The cursor is ``(seed root, next stage, next epoch, minibatches drawn)``;
the last field doubles as the Adam step counter.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lstm import PARAM_NAMES, Params
from .optim import AdamState

MAGIC = b"SISA"
VERSION = 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1
_HEADER = struct.Struct("<4sHHH4Q")


class CheckpointError(ValueError):
    pass


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK
    return h


@dataclass(frozen=True)
class RngCursor:
    root: int
    stage: int
    epoch: int
    draws: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.root, self.stage, self.epoch, self.draws)


@dataclass(frozen=True)
class Checkpoint:
    shard: int
    stage: int
    params: Params
    adam: AdamState
    cursor: RngCursor

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        out = [(f"param/{k}", self.params[k]) for k in PARAM_NAMES]
        out += [(f"adam.m/{k}", self.adam.m[k]) for k in PARAM_NAMES]
        out += [(f"adam.v/{k}", self.adam.v[k]) for k in PARAM_NAMES]
        return out

    def to_bytes(self) -> bytes:
        if self.adam.t != self.cursor.draws:
            raise CheckpointError("Adam step counter disagrees with the rng cursor")
        parts = [_HEADER.pack(MAGIC, VERSION, self.shard, self.stage, *self.cursor.as_tuple())]
        for name, arr in self.tensors():
            raw = name.encode("utf-8")
            parts.append(struct.pack("<HB", len(raw), arr.ndim))
            parts.append(raw)
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        body = b"".join(parts)
        return body + struct.pack("<Q", fnv1a_64(body))

    @property
    def digest(self) -> int:
        return struct.unpack("<Q", self.to_bytes()[-8:])[0]

    @classmethod
    def from_bytes(cls, data: bytes) -> Checkpoint:
        if len(data) < _HEADER.size + 8:
            raise CheckpointError("checkpoint truncated")
        body, (digest,) = data[:-8], struct.unpack("<Q", data[-8:])
        if fnv1a_64(body) != digest:
            raise CheckpointError("checkpoint digest mismatch (corrupted file)")
        magic, version, shard, stage, *cursor = _HEADER.unpack_from(body, 0)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = _HEADER.size
        tensors: dict[str, np.ndarray] = {}
        while pos < len(body):
            name_len, rank = struct.unpack_from("<HB", body, pos)
            pos += 3
            name = body[pos:pos + name_len].decode("utf-8")
            pos += name_len
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if dims else 1
            arr = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(dims)
            tensors[name] = arr.astype(np.float64)
            pos += 8 * count
        try:
            params = {k: tensors[f"param/{k}"] for k in PARAM_NAMES}
            m = {k: tensors[f"adam.m/{k}"] for k in PARAM_NAMES}
            v = {k: tensors[f"adam.v/{k}"] for k in PARAM_NAMES}
        except KeyError as exc:
            raise CheckpointError(f"checkpoint missing tensor {exc}") from None
        rc = RngCursor(*cursor)
        return cls(shard, stage, params, AdamState(m, v, rc.draws), rc)


class CheckpointStore:
    """Directory of ``shard_<s>/stage_<r>.ckpt`` files with atomic replacement."""

    def __init__(self, root: str | os.PathLike) -> None:
        self.root = Path(root)

    def path(self, shard: int, stage: int) -> Path:
        return self.root / f"shard_{shard}" / f"stage_{stage}.ckpt"

    def save(self, ckpt: Checkpoint) -> Path:
        target = self.path(ckpt.shard, ckpt.stage)
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=target.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(ckpt.to_bytes())
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return target

    def load(self, shard: int, stage: int) -> Checkpoint | None:
        """Return the checkpoint, or ``None`` if it is absent or fails its digest."""
        p = self.path(shard, stage)
        if not p.exists():
            return None
        try:
            return Checkpoint.from_bytes(p.read_bytes())
        except CheckpointError:
            return None

    def load_shard(self, shard: int, num_stages: int) -> list[Checkpoint | None]:
        return [self.load(shard, r) for r in range(num_stages + 1)]
