"""Binary 8-bit PGM (P5) reading and writing."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np


class PGMError(ValueError):
    pass


def encode_pgm(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise ValueError("PGM payload must be a 2-D uint8 array")
    h, w = arr.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()


def _tokens(data: bytes, n: int):
    """First ``n`` whitespace-separated header tokens (comments skipped) and the payload offset."""
    out, i = [], 0
    while len(out) < n:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise PGMError("truncated header")
        out.append(data[i:j])
        i = j
    return out, i + 1  # exactly one whitespace byte precedes the raster


def decode_pgm(data: bytes) -> np.ndarray:
    if data[:2] != b"P5":
        raise PGMError("bad magic (expected P5)")
    (magic, w, h, maxval), off = _tokens(data, 4)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise PGMError(f"malformed header: {exc}") from None
    if maxval != 255:
        raise PGMError(f"unsupported maxval {maxval}")
    raster = data[off:off + w * h]
    if len(raster) != w * h:
        raise PGMError(f"expected {w * h} pixels, found {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def write_pgm(path, arr: np.ndarray) -> None:
    atomic_write_bytes(path, encode_pgm(arr))


def read_pgm(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise PGMError(f"{path}: {exc.strerror}") from None
    try:
        return decode_pgm(data)
    except PGMError as exc:
        raise PGMError(f"{path}: {exc}") from None
