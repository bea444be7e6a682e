"""Binary training checkpoints.

Layout (all integers little-endian)::

    b"TESA"                   magic
    uint32 version            currently 1
    uint32 n_blocks
    n_blocks x block:
        uint16 name length, name (utf-8)
        uint16 dtype length, numpy dtype string (e.g. "<f4")
        uint8  ndim, ndim x uint64 shape
        uint64 nbytes, raw C-order data

Block order is fixed: ``meta`` (utf-8 JSON with the config, vocabulary
digest, epoch counter and rng state), then ``param.<name>`` in
:meth:`ModelParams.tensors` order, then ``optim.<key>`` in optimizer-state
order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..attention import ModelParams
from .config import TrainConfig

MAGIC = b"TESA"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    config: TrainConfig
    vocab_digest: str
    epoch: int
    rng_state: dict
    optimizer_state: dict[str, np.ndarray]


def _write_block(fh, name: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    arr = arr.astype(dtype, copy=False)
    name_b, dtype_b = name.encode(), dtype.str.encode()
    fh.write(struct.pack("<H", len(name_b)) + name_b)
    fh.write(struct.pack("<H", len(dtype_b)) + dtype_b)
    fh.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
    data = arr.tobytes()
    fh.write(struct.pack("<Q", len(data)) + data)


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


def _read_block(fh) -> tuple[str, np.ndarray]:
    (n,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, n).decode()
    (n,) = struct.unpack("<H", _read_exact(fh, 2))
    dtype = np.dtype(_read_exact(fh, n).decode())
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
    shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
    (nbytes,) = struct.unpack("<Q", _read_exact(fh, 8))
    arr = np.frombuffer(_read_exact(fh, nbytes), dtype=dtype).reshape(shape).copy()
    return name, arr


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    meta = {
        "config": ckpt.config.to_dict(),
        "vocab_digest": ckpt.vocab_digest,
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "mode": ckpt.params.mode.value,
    }
    blocks = [("meta", np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8))]
    blocks += [(f"param.{name}", arr) for name, arr in ckpt.params.tensors()]
    blocks += [(f"optim.{key}", arr) for key, arr in ckpt.optimizer_state.items()]
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(blocks)))
        for name, arr in blocks:
            _write_block(fh, name, arr)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        version, n_blocks = struct.unpack("<II", _read_exact(fh, 8))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        blocks = [_read_block(fh) for _ in range(n_blocks)]
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes")
    if not blocks or blocks[0][0] != "meta":
        raise CheckpointError(f"{path}: missing meta block")
    meta = json.loads(blocks[0][1].tobytes().decode())
    params = {k[len("param."):]: v for k, v in blocks if k.startswith("param.")}
    optim = {k[len("optim."):]: v for k, v in blocks if k.startswith("optim.")}
    return Checkpoint(
        params=ModelParams(**params, mode=meta["mode"]),
        config=TrainConfig.from_dict(meta["config"]),
        vocab_digest=meta["vocab_digest"],
        epoch=meta["epoch"],
        rng_state=meta["rng_state"],
        optimizer_state=optim,
    )
