"""Binary checkpoint container (``AVCK`` format, version 1).

Layout, all integers little-endian::

    "AVCK"                      4-byte magic
    u32   version               currently 1
    u64   step
    u32 n + n bytes             config text (UTF-8, ``key = value`` lines)
    u32 n + n bytes             tensor manifest (UTF-8, one ``name dtype dim0 dim1 ...`` per line)
    ...                         raw tensor blobs, C order, in manifest order
    u32 n + n bytes             optimizer manifest (same line format)
    ...                         raw optimizer blobs in optimizer-manifest order
    u32 n + n bytes             RNG state as canonical JSON (sorted keys)

dtype codes are ``f32``, ``f64``, ``i64`` and ``u64``; a scalar has no dims.
The file must end exactly after the RNG block.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"AVCK"
VERSION = 1

_CODES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "i64": np.dtype("<i8"), "u64": np.dtype("<u8")}
_NAMES = {v: k for k, v in _CODES.items()}


class CheckpointError(Exception):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class UnknownParameterError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    step: int
    tensors: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)
    config_text: str = ""
    rng: dict = field(default_factory=dict)


def _code(arr: np.ndarray) -> str:
    dt = arr.dtype.newbyteorder("<")
    if dt not in _NAMES:
        raise TypeError(f"unsupported checkpoint dtype {arr.dtype}")
    return _NAMES[dt]


def _manifest(tensors: dict[str, np.ndarray]) -> bytes:
    lines = []
    for name, arr in tensors.items():
        if any(c.isspace() for c in name):
            raise ValueError(f"tensor name {name!r} contains whitespace")
        lines.append(" ".join([name, _code(arr)] + [str(d) for d in arr.shape]) + "\n")
    return "".join(lines).encode()


def _block(data: bytes) -> bytes:
    return struct.pack("<I", len(data)) + data


def to_bytes(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<IQ", VERSION, ckpt.step), _block(ckpt.config_text.encode())]
    for group in (ckpt.tensors, ckpt.optimizer):
        parts.append(_block(_manifest(group)))
        for arr in group.values():
            arr = np.asarray(arr)
            parts.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    rng = json.dumps(ckpt.rng, sort_keys=True, separators=(",", ":")).encode()
    parts.append(_block(rng))
    return b"".join(parts)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(
                f"checkpoint truncated: need {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def block(self) -> bytes:
        return self.take(self.u32())

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for line in self.block().decode().splitlines():
            name, code, *dims = line.split()
            if code not in _CODES:
                raise CheckpointError(f"unknown dtype code {code!r} for {name}")
            shape = tuple(int(d) for d in dims)
            dt = _CODES[code]
            n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            out[name] = np.frombuffer(self.take(n), dtype=dt).reshape(shape).copy()
        return out


def from_bytes(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointVersionError(f"bad magic {magic!r}; not an AVCK checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, this build reads {VERSION}")
    step = struct.unpack("<Q", r.take(8))[0]
    config_text = r.block().decode()
    tensors = r.tensors()
    optimizer = r.tensors()
    rng = json.loads(r.block().decode())
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after checkpoint end")
    return Checkpoint(step, tensors, optimizer, config_text, rng)


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
