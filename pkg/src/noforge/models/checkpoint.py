"""Single-file checkpoints.

Layout::

    b"NOFORGE1"                      8-byte magic
    uint64 little-endian             header length in bytes
    UTF-8 JSON header                kind, config, config_hash, dtype, tensors
    raw little-endian payloads       in header order, C-ordered

Each tensor entry records ``name, role (param|buffer), shape, dtype, offset,
nbytes``; offsets are relative to the start of the payload block. Complex
spectral weights are stored as their ``*_re`` plane followed by ``*_im``.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import CorruptCheckpoint, IncompatibleCheckpoint, IOFailure
from .configs import config_from_dict

MAGIC = b"NOFORGE1"
FORMAT_VERSION = 1


def state_dict(model) -> "OrderedDict[str, tuple[str, np.ndarray]]":
    """Copies of all parameters and buffers, keyed by stable name."""
    out = OrderedDict()
    for name, p in model.named_params():
        out[name] = ("param", p.value.copy())
    for name, owner, local in model.named_buffers():
        out[name] = ("buffer", owner._buffers[local].copy())
    return out


def load_state_dict(model, state) -> None:
    params = dict(model.named_params())
    buffers = {name: (owner, local) for name, owner, local in model.named_buffers()}
    expected = set(params) | set(buffers)
    if set(state) != expected:
        missing = sorted(expected - set(state))
        extra = sorted(set(state) - expected)
        raise IncompatibleCheckpoint(f"tensor names differ (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, (role, arr) in state.items():
        if name in params:
            p = params[name]
            if tuple(arr.shape) != p.shape:
                raise IncompatibleCheckpoint(f"{name}: shape {arr.shape} != expected {p.shape}")
            p.value = np.array(arr, copy=True)
            p.grad = np.zeros_like(p.value)
        else:
            owner, local = buffers[name]
            cur = owner._buffers[local]
            if cur is not None and cur.shape != arr.shape:
                raise IncompatibleCheckpoint(f"{name}: shape {arr.shape} != expected {cur.shape}")
            owner._buffers[local] = np.array(arr, copy=True)


def _header(model) -> tuple[dict, list[np.ndarray]]:
    tensors, payloads = [], []
    offset = 0
    for name, (role, arr) in state_dict(model).items():
        a = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        tensors.append({"name": name, "role": role, "shape": list(a.shape),
                        "dtype": a.dtype.str, "offset": offset, "nbytes": a.nbytes})
        payloads.append(a)
        offset += a.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "config": model.config.to_dict(),
        "config_hash": model.config.config_hash(),
        "dtype": np.dtype(model.dtype).name,
        "tensors": tensors,
    }
    return header, payloads


def save_checkpoint(model, path) -> None:
    """Write atomically (temp file in the same directory, then rename)."""
    if model.is_meta:
        raise IOFailure("cannot save a meta model")
    header, payloads = _header(model)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".ckpt-")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(MAGIC)
                f.write(struct.pack("<Q", len(blob)))
                f.write(blob)
                for a in payloads:
                    f.write(a.tobytes())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IOFailure(f"could not write checkpoint {path}: {exc}") from exc


def read_checkpoint(path) -> tuple[dict, "OrderedDict[str, tuple[str, np.ndarray]]"]:
    """Parse and validate a checkpoint file into ``(header, state)``."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IOFailure(f"could not read checkpoint {path}: {exc}") from exc
    if len(data) < 16 or data[:8] != MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if 16 + hlen > len(data):
        raise CorruptCheckpoint(f"{path}: truncated header")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
        tensors = header["tensors"]
    except (ValueError, KeyError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header ({exc})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported format version {header.get('format_version')}")
    body = memoryview(data)[16 + hlen:]
    state = OrderedDict()
    for t in tensors:
        dt = np.dtype(t["dtype"])
        shape = tuple(t["shape"])
        end = t["offset"] + t["nbytes"]
        if end > len(body) or t["nbytes"] != dt.itemsize * int(np.prod(shape, dtype=np.int64)):
            raise CorruptCheckpoint(f"{path}: payload for {t['name']} is truncated or inconsistent")
        arr = np.frombuffer(body[t["offset"]:end], dtype=dt).reshape(shape)
        state[t["name"]] = (t["role"], arr.astype(dt.newbyteorder("="), copy=True))
    expected = sum(t["nbytes"] for t in tensors)
    if len(body) != expected:
        raise CorruptCheckpoint(f"{path}: payload size {len(body)} != {expected}")
    return header, state


def load_checkpoint(path):
    """Rebuild the model described by the checkpoint header."""
    from . import build_model

    header, state = read_checkpoint(path)
    config = config_from_dict(header["kind"], header["config"])
    if config.config_hash() != header.get("config_hash"):
        raise CorruptCheckpoint(f"{path}: config hash does not match its config")
    model = build_model(header["kind"], config, meta=True, dtype=np.dtype(header["dtype"]))
    load_state_dict(model, state)
    model.eval()
    return model


def load_into(model, path) -> None:
    """Load weights into an existing model of the same configuration."""
    header, state = read_checkpoint(path)
    if header.get("kind") != model.kind or header.get("config_hash") != model.config.config_hash():
        raise IncompatibleCheckpoint(
            f"checkpoint is {header.get('kind')}/{header.get('config_hash')}, "
            f"model is {model.kind}/{model.config.config_hash()}")
    load_state_dict(model, state)
