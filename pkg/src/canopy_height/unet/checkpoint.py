"""Versioned little-endian checkpoint container.

Layout::

    magic  b"CHMUNET\\0"            8 bytes
    version                        u32
    meta length, meta JSON          u32 + utf-8 (config, epoch, optimizer scalars)
    tensor count                   u32
    per tensor: name length u16, name, dtype code u8, ndim u8, dims u32*ndim, raw data
    crc32 of everything above      u32
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CorruptFileError, IncompatibleCheckpointError
from .model import UNetConfig, parameter_shapes
from .optim import OptimizerState

MAGIC = b"CHMUNET\0"
VERSION = 1
_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_OF = {np.dtype("float32"): 0, np.dtype("float64"): 1}


@dataclass
class Checkpoint:
    config: UNetConfig
    weights: dict[str, np.ndarray]
    state: OptimizerState
    epoch: int = 0
    extra: dict = field(default_factory=dict)


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    code = _CODE_OF[arr.dtype]
    nb = name.encode("utf-8")
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype(_CODES[code], copy=False).tobytes()


def save_weights(weights, state: OptimizerState, path, config: UNetConfig, epoch: int = 0,
                 extra: dict | None = None) -> None:
    meta = {
        "config": config.to_dict(),
        "epoch": int(epoch),
        "optimizer": {"learning_rate": state.learning_rate, "rho": state.rho,
                      "epsilon": state.epsilon, "step": state.step},
        "extra": extra or {},
    }
    mb = json.dumps(meta, sort_keys=True).encode("utf-8")
    tensors = [(k, weights[k]) for k in parameter_shapes(config)]
    tensors += [(f"opt/{k}", state.s[k]) for k in parameter_shapes(config) if k in state.s]
    body = bytearray(MAGIC + struct.pack("<I", VERSION) + struct.pack("<I", len(mb)) + mb)
    body += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        body += _pack_tensor(name, arr)
    body += struct.pack("<I", zlib.crc32(body))
    Path(path).write_bytes(bytes(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptFileError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_weights(path, expected: UNetConfig | None = None) -> Checkpoint:
    """Read a checkpoint; ``expected`` (if given) must match the stored architecture."""
    raw = Path(path).read_bytes()
    head = raw[:len(MAGIC)]
    if head != MAGIC[:len(head)] or not raw:
        raise IncompatibleCheckpointError(f"{path}: bad magic, not a checkpoint")
    if len(raw) < len(MAGIC) + 4:
        raise CorruptFileError(f"{path}: checkpoint truncated")
    (version,) = struct.unpack_from("<I", raw, len(MAGIC))
    if version != VERSION:
        raise IncompatibleCheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    if len(raw) < len(MAGIC) + 12:
        raise CorruptFileError(f"{path}: checkpoint truncated")
    (crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) != crc:
        raise CorruptFileError(f"{path}: checksum mismatch (truncated or damaged)")
    r = _Reader(raw[:-4])
    r.take(len(MAGIC) + 4)
    (mlen,) = r.unpack("<I")
    meta = json.loads(r.take(mlen).decode("utf-8"))
    config = UNetConfig(**meta["config"])
    if expected is not None:
        mine = {k: v for k, v in config.to_dict().items() if k != "seed"}
        want = {k: v for k, v in expected.to_dict().items() if k != "seed"}
        if mine != want:
            raise IncompatibleCheckpointError(f"{path}: checkpoint architecture {mine} != requested {want}")
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        code, ndim = r.unpack("<BB")
        if code not in _CODES:
            raise CorruptFileError(f"{path}: unknown tensor dtype code {code}")
        shape = r.unpack(f"<{ndim}I")
        dt = _CODES[code]
        nbytes = int(np.prod(shape)) * dt.itemsize
        tensors[name] = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    shapes = parameter_shapes(config)
    weights = {}
    for k, shp in shapes.items():
        if k not in tensors or tensors[k].shape != shp:
            raise IncompatibleCheckpointError(f"{path}: tensor {k} missing or mis-shaped")
        weights[k] = tensors[k]
    opt = meta["optimizer"]
    state = OptimizerState(learning_rate=opt["learning_rate"], rho=opt["rho"], epsilon=opt["epsilon"],
                           step=opt["step"], s={k: tensors[f"opt/{k}"] for k in shapes if f"opt/{k}" in tensors})
    return Checkpoint(config, weights, state, meta["epoch"], meta.get("extra", {}))
