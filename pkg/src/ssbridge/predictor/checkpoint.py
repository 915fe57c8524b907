"""Checkpoint container.

    b"SSBC" | u32 version | u32 header_len | header (UTF-8 JSON) | f32le params

The header holds the architecture, schedule parameters, a digest of the
training config and the parameter layout manifest.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..pgm import atomic_write_bytes
from ..schedule import Schedule, make_schedule
from .unet import TinyUNet, UNetConfig

MAGIC = b"SSBC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def encode_checkpoint(net: TinyUNet, s: Schedule, train_cfg: dict | None = None) -> bytes:
    header = {
        "arch": net.cfg.to_dict(),
        "schedule": s.params(),
        "train_config": train_cfg,
        "train_digest": config_digest(train_cfg) if train_cfg is not None else None,
        "manifest": [[name, list(shape)] for name, shape in net.manifest],
        "n_params": net.n_params,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    blob = np.asarray(net.params, dtype="<f4").tobytes()
    return MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + blob


def save_checkpoint(path, net: TinyUNet, s: Schedule, train_cfg: dict | None = None) -> None:
    atomic_write_bytes(path, encode_checkpoint(net, s, train_cfg))


def decode_checkpoint(data: bytes, source="checkpoint"):
    if data[:4] != MAGIC:
        raise CheckpointError(f"{source}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise CheckpointError(f"{source}: truncated header")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported version {version}")
    try:
        header = json.loads(data[12:12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt header ({exc})") from None
    arch = UNetConfig(**header["arch"])
    net = TinyUNet(arch)
    expected = [[n, list(sh)] for n, sh in net.manifest]
    if header["manifest"] != expected:
        raise CheckpointError(f"{source}: layout manifest does not match architecture")
    blob = data[12 + hlen:]
    if len(blob) != 4 * net.n_params:
        raise CheckpointError(f"{source}: expected {4 * net.n_params} parameter bytes, got {len(blob)}")
    net.params = np.frombuffer(blob, dtype="<f4").astype(np.float32)
    return net, make_schedule(**header["schedule"]), header


def load_checkpoint(path):
    """Returns ``(net, schedule, header)``."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from None
    return decode_checkpoint(data, str(path))
