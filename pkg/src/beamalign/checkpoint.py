"""Self-describing binary checkpoint container.

Layout (little-endian)::

    b"BALNCKPT" | u32 format version | u64 header length | header (UTF-8 JSON)
    | float64 payload | sha256 of all preceding bytes (32 bytes)

The header holds the scheme tag, config snapshot, iteration counter and a
tensor directory of (name, shape, byte offset into the payload).
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import SystemConfig
from .errors import (CheckpointError, CheckpointShapeError, ChecksumError, VariantMismatchError,
                     VersionError)

MAGIC = b"BALNCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DIGEST = 32


@dataclass
class Checkpoint:
    scheme: str
    config: SystemConfig
    tensors: dict[str, np.ndarray]
    iteration: int = 0
    optimizer_step: int | None = None
    metadata: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @property
    def variant(self) -> str:
        return self.config.variant


def encode_checkpoint(c: Checkpoint) -> bytes:
    directory, chunks, offset = [], [], 0
    for name, arr in c.tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        directory.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        chunks.append(data)
        offset += len(data)
    header = {
        "scheme": c.scheme,
        "variant": c.config.variant,
        "config": c.config.to_flat(),
        "iteration": c.iteration,
        "optimizer_step": c.optimizer_step,
        "metadata": c.metadata,
        "tensors": directory,
        "payload_bytes": offset,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _PREFIX.pack(MAGIC, c.version, len(hbytes)) + hbytes + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < _PREFIX.size + _DIGEST or not blob.startswith(MAGIC):
        if len(blob) >= len(MAGIC) and not blob.startswith(MAGIC):
            raise CheckpointError("not a checkpoint file (bad magic)")
        raise ChecksumError("checkpoint truncated")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checkpoint checksum mismatch (corrupted or truncated file)")
    _, version, hlen = _PREFIX.unpack_from(body)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported checkpoint format version {version} (expected {FORMAT_VERSION})")
    header = json.loads(body[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    payload = body[_PREFIX.size + hlen:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointShapeError("payload size does not match the tensor directory")
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start, stop = entry["offset"], entry["offset"] + 8 * count
        if stop > len(payload):
            raise CheckpointShapeError(f"tensor {entry['name']} overruns the payload")
        arr = np.frombuffer(payload[start:stop], dtype="<f8").astype(np.float64)
        tensors[entry["name"]] = arr.reshape(entry["shape"])
    cfg = SystemConfig.from_flat(header["config"])
    return Checkpoint(header["scheme"], cfg, tensors, header["iteration"], header["optimizer_step"],
                      header["metadata"], version)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(c: Checkpoint, path) -> None:
    atomic_write_bytes(path, encode_checkpoint(c))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


# ----------------------------------------------------------------------

def checkpoint_from_params(params, cfg: SystemConfig, iteration: int = 0, opt=None) -> Checkpoint:
    snapshot = cfg.replace(hidden_size=params.hidden) if getattr(params, "hidden", 0) else cfg
    tensors = {name: t.values for name, t in params.named_tensors().items()}
    step = None
    if opt is not None:
        step = opt.step
        for name in params.trainable():
            if name in opt.m:
                tensors[f"opt.m/{name}"] = opt.m[name]
                tensors[f"opt.v/{name}"] = opt.v[name]
    return Checkpoint(cfg.scheme, snapshot, tensors, iteration, step,
                      {"producer": "beamalign", "format": "checkpoint"})


def params_from_checkpoint(c: Checkpoint, cfg: SystemConfig | None = None):
    """Rebuild parameters (and optimizer state, if stored) from a checkpoint.

    When ``cfg`` is given its scheme/variant must match the checkpoint.
    """
    from .schemes import init_scheme
    from .training import OptimizerState
    from .config import derive_rng

    if cfg is not None and (cfg.scheme != c.scheme or cfg.variant != c.variant):
        raise VariantMismatchError(
            f"checkpoint holds {c.scheme}/{c.variant} but {cfg.scheme}/{cfg.variant} was requested")
    params = init_scheme(c.config, derive_rng(c.config.seed, "init"))
    named = params.named_tensors()
    missing = [k for k in named if k not in c.tensors]
    if missing:
        raise CheckpointShapeError(f"checkpoint lacks tensors {missing[:3]}")
    for name, t in named.items():
        arr = c.tensors[name]
        if arr.shape != t.shape:
            raise CheckpointShapeError(f"tensor {name}: checkpoint shape {arr.shape} != model shape {t.shape}")
        t.values = arr.copy()
    opt = None
    if c.optimizer_step is not None:
        opt = OptimizerState(step=c.optimizer_step)
        for name in params.trainable():
            if f"opt.m/{name}" in c.tensors:
                opt.m[name] = c.tensors[f"opt.m/{name}"].copy()
                opt.v[name] = c.tensors[f"opt.v/{name}"].copy()
    return params, opt
