"""Checkpoint files: one JSON manifest line followed by raw little-endian float64 arrays.

Layout::

    SOLUTION-FLOW-CHECKPOINT <version> <manifest byte length>\\n
    <manifest JSON>\\n
    <array bytes, in manifest order>
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

from .config import ConfigError, TrainConfig, parse_config
from .network import EmaParams, ModelParams
from .optim import Adam
from .training import TrainState

MAGIC = "SOLUTION-FLOW-CHECKPOINT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _array_groups(state: TrainState):
    yield "live", state.params.arrays
    yield "ema", state.ema.shadow.arrays
    yield "adam_m", state.optimizer.m
    yield "adam_v", state.optimizer.v


def checkpoint_bytes(state: TrainState) -> bytes:
    entries, blobs = [], []
    for group, arrays in _array_groups(state):
        for name in state.params.arrays:
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            entries.append({"name": f"{group}/{name}", "shape": list(arr.shape)})
            blobs.append(arr.tobytes())
    config_text = state.config.to_text()
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config_text,
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "step": state.step,
        "ema_decay": state.ema.decay,
        "optimizer": {"step_count": state.optimizer.step_count, "lr": state.optimizer.lr,
                      "beta1": state.optimizer.beta1, "beta2": state.optimizer.beta2,
                      "eps": state.optimizer.eps},
        "arrays": entries,
        "streams": {role: g.bit_generator.state for role, g in state.streams.items()},
    }
    body = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    header = f"{MAGIC} {FORMAT_VERSION} {len(body)}\n".encode()
    return header + body + b"\n" + b"".join(blobs)


def save_checkpoint(state: TrainState, path) -> None:
    """Atomic write (temp file in the target directory, then rename)."""
    data = checkpoint_bytes(state)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def parse_checkpoint(data: bytes) -> TrainState:
    try:
        newline = data.index(b"\n")
        magic, version, length = data[:newline].decode().split()
        version, length = int(version), int(length)
    except ValueError:
        raise CheckpointError("not a checkpoint file") from None
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = newline + 1
    manifest = json.loads(data[start:start + length])
    config_text = manifest["config"]
    if hashlib.sha256(config_text.encode()).hexdigest() != manifest["config_sha256"]:
        raise CheckpointError("config echo does not match its content hash")
    try:
        config = parse_config(config_text)
    except ConfigError as exc:
        raise CheckpointError(f"embedded config invalid: {exc}") from None
    offset = start + length + 1
    groups: dict[str, dict[str, np.ndarray]] = {"live": {}, "ema": {}, "adam_m": {}, "adam_v": {}}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        chunk = data[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError("truncated checkpoint")
        group, name = entry["name"].split("/", 1)
        groups[group][name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(data):
        raise CheckpointError("trailing bytes after arrays")
    net = config.network_config()
    expected = net.param_shapes()
    for group, arrays in groups.items():
        if {k: v.shape for k, v in arrays.items()} != expected:
            raise CheckpointError(f"array shapes in group {group!r} do not match the config")
    opt_meta = manifest["optimizer"]
    opt = Adam(opt_meta["lr"], opt_meta["beta1"], opt_meta["beta2"], opt_meta["eps"],
               opt_meta["step_count"], groups["adam_m"], groups["adam_v"])
    streams = {}
    for role, st in manifest["streams"].items():
        g = np.random.Generator(np.random.PCG64())
        g.bit_generator.state = st
        streams[role] = g
    params = ModelParams(net, groups["live"])
    ema = EmaParams(ModelParams(net, groups["ema"]), manifest["ema_decay"])
    return TrainState(config, manifest["step"], params, ema, opt, streams)


def load_checkpoint(path) -> TrainState:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())
