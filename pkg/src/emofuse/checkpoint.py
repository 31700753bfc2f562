"""Self-describing binary checkpoints.

Layout: 8-byte magic, uint32 format version, uint64-length-prefixed JSON
header (config, epoch, history, RNG states, tensor count), then one record
per tensor: length-prefixed name, dtype string, dims, and a little-endian
payload. Saving the result of a load reproduces the file byte for byte.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"EMFSCKPT"
VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    config: dict
    epoch: int
    model_state: dict[str, np.ndarray]
    opt_state: dict[str, np.ndarray] = field(default_factory=dict)
    opt_meta: dict = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


def _tensor_items(ckpt: Checkpoint):
    for name, arr in ckpt.model_state.items():
        yield f"model.{name}", arr
    for name, arr in ckpt.opt_state.items():
        yield f"opt.{name}", arr


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    tensors = list(_tensor_items(ckpt))
    header = json.dumps(
        {
            "config": ckpt.config,
            "epoch": ckpt.epoch,
            "opt_meta": ckpt.opt_meta,
            "rng": ckpt.rng_state,
            "history": ckpt.history,
            "tensor_count": len(tensors),
        }
    ).encode("utf-8")
    buf.write(struct.pack("<Q", len(header)))
    buf.write(header)
    for name, arr in tensors:
        arr = np.asarray(arr)
        if arr.dtype == np.float32:
            dtype_str = "<f4"
        elif arr.dtype == np.float64:
            dtype_str = "<f8"
        else:
            raise CheckpointError(f"tensor {name} has unsupported dtype {arr.dtype}")
        name_b = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<B", len(dtype_str)))
        buf.write(dtype_str.encode("ascii"))
        buf.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[dtype_str]).tobytes())
    return buf.getvalue()


def _read_exact(buf: io.BytesIO, n: int, what: str) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def checkpoint_from_bytes(raw: bytes) -> Checkpoint:
    buf = io.BytesIO(raw)
    if _read_exact(buf, len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", _read_exact(buf, 4, "version"))
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version} != supported {VERSION}")
    (hlen,) = struct.unpack("<Q", _read_exact(buf, 8, "header length"))
    header = json.loads(_read_exact(buf, hlen, "header"))
    model_state: dict[str, np.ndarray] = {}
    opt_state: dict[str, np.ndarray] = {}
    for _ in range(header["tensor_count"]):
        (nlen,) = struct.unpack("<H", _read_exact(buf, 2, "tensor name length"))
        name = _read_exact(buf, nlen, "tensor name").decode("utf-8")
        (dlen,) = struct.unpack("<B", _read_exact(buf, 1, f"{name} dtype length"))
        dtype_str = _read_exact(buf, dlen, f"{name} dtype").decode("ascii")
        if dtype_str not in _DTYPES:
            raise CheckpointError(f"tensor {name}: unknown dtype {dtype_str!r}")
        (ndim,) = struct.unpack("<B", _read_exact(buf, 1, f"{name} rank"))
        shape = tuple(
            struct.unpack("<I", _read_exact(buf, 4, f"{name} dim {i}"))[0] for i in range(ndim)
        )
        dtype = _DTYPES[dtype_str]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        payload = _read_exact(buf, nbytes, f"{name} payload")
        arr = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
        if name.startswith("model."):
            model_state[name[len("model."):]] = arr
        elif name.startswith("opt."):
            opt_state[name[len("opt."):]] = arr
        else:
            raise CheckpointError(f"tensor {name}: unknown section prefix")
    trailing = buf.read(1)
    if trailing:
        raise CheckpointError("trailing bytes after last tensor")
    return Checkpoint(
        config=header["config"],
        epoch=header["epoch"],
        model_state=model_state,
        opt_state=opt_state,
        opt_meta=header.get("opt_meta", {}),
        rng_state=header.get("rng", {}),
        history=header.get("history", []),
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())


def load_into(model, ckpt: Checkpoint) -> None:
    """Copy checkpoint tensors into a constructed model, validating shapes."""
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(ckpt.model_state))
    extra = sorted(set(ckpt.model_state) - set(params))
    if missing or extra:
        raise CheckpointError(f"parameter names differ (missing {missing[:3]}, extra {extra[:3]})")
    for name, p in params.items():
        arr = ckpt.model_state[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise CheckpointError(
                f"tensor {name}: checkpoint shape {arr.shape} != model shape {p.data.shape}"
            )
        p.data = arr.astype(p.data.dtype, copy=True)
