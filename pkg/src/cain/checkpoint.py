"""Binary checkpoints.

Layout (little endian)::

    8 bytes   magic b"CAINCKPT"
    u32       format version (1)
    32 bytes  SHA-256 of the model config (the config hash)
    u64       header length H
    H bytes   UTF-8 JSON header: model config, optimizer scalars, training
              position, and the ordered tensor table [{"name", "shape"}, ...]
    ...       float64 data of every tensor in table order
    32 bytes  SHA-256 of everything above (integrity trailer)

Tensor names: model parameters as registered, then ``adam.m/<name>`` and
``adam.v/<name>`` when optimizer state is stored.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from cain.config import ModelConfig
from cain.errors import CheckpointError, ConfigDriftError
from cain.model import CainModel
from cain.optim import Adam

MAGIC = b"CAINCKPT"
VERSION = 1


def save_checkpoint(path, model: CainModel, opt: Adam | None = None, extra: dict | None = None):
    tensors = [(name, p.data) for name, p in model.params.items()]
    if opt is not None:
        tensors += [(f"adam.m/{k}", v) for k, v in opt.m.items()]
        tensors += [(f"adam.v/{k}", v) for k, v in opt.v.items()]
    header = {
        "config": model.cfg.as_dict(),
        "optimizer": None if opt is None else opt.state(),
        "extra": extra or {},
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", VERSION), model.cfg.fingerprint(),
             struct.pack("<Q", len(blob)), blob]
    parts += [np.ascontiguousarray(t, dtype="<f8").tobytes() for _, t in tensors]
    body = b"".join(parts)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(body + hashlib.sha256(body).digest())
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, bytes, dict[str, np.ndarray]]:
    """Parse and verify a checkpoint file; returns (header, config hash, tensors)."""
    raw = Path(path).read_bytes()
    if len(raw) < 8 + 4 + 32 + 8 + 32 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic or truncated)")
    body, trailer = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != trailer:
        raise CheckpointError(f"{path}: integrity check failed (truncated or corrupted)")
    (version,) = struct.unpack_from("<I", body, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    config_hash = body[12:44]
    (hlen,) = struct.unpack_from("<Q", body, 44)
    header = json.loads(body[52:52 + hlen])
    offset = 52 + hlen
    tensors = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=offset)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
        offset += 8 * n
    if offset != len(body):
        raise CheckpointError(f"{path}: payload size does not match the tensor table")
    return header, config_hash, tensors


def load_checkpoint(path, model: CainModel | None = None, opt: Adam | None = None):
    """Restore a checkpoint.

    With ``model`` given, its config must hash to the stored one; otherwise a
    model is rebuilt from the stored config. Returns ``(model, opt, extra)``;
    ``opt`` is rebuilt when the file carries optimizer state and none is passed.
    """
    header, config_hash, tensors = read_checkpoint(path)
    if model is None:
        model = CainModel(ModelConfig.from_dict(header["config"]))
    if model.cfg.fingerprint() != config_hash:
        raise ConfigDriftError(
            f"{path}: checkpoint was written for a different model config; refusing to load"
        )
    missing = [n for n in model.params if n not in tensors]
    if missing:
        raise CheckpointError(f"{path}: missing tensors {missing[:3]}")
    for name, p in model.params.items():
        if tensors[name].shape != p.shape:
            raise CheckpointError(f"{path}: tensor {name!r} has shape {tensors[name].shape}")
        p.data[...] = tensors[name]
        p.grad = None
    state = header.get("optimizer")
    if state is not None:
        if opt is None:
            opt = Adam(model.params, lr=state["lr"])
        opt.lr, opt.beta1, opt.beta2, opt.eps = (state[k] for k in ("lr", "beta1", "beta2", "eps"))
        opt.step_count = state["step"]
        for name in model.params:
            opt.m[name][...] = tensors[f"adam.m/{name}"]
            opt.v[name][...] = tensors[f"adam.v/{name}"]
    return model, opt, header.get("extra", {})
