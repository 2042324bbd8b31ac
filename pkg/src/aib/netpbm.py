"""Minimal binary PGM (P5) / PPM (P6) writers and readers, maxval 255."""

from __future__ import annotations

import numpy as np

from .exceptions import FormatError


def write_pgm(path, gray: np.ndarray) -> None:
    arr = np.ascontiguousarray(gray, dtype=np.uint8)
    if arr.ndim != 2:
        raise FormatError(f"PGM wants a 2-D array, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    arr = np.asarray(rgb, dtype=np.uint8)
    if arr.ndim == 3 and arr.shape[0] == 3:  # accept [3,H,W]
        arr = np.moveaxis(arr, 0, 2)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FormatError(f"PPM wants [H,W,3], got shape {arr.shape}")
    h, w, _ = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr).tobytes())


def _read_netpbm(path, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    if not buf.startswith(magic):
        raise FormatError(f"{path}: not a {magic.decode()} file")

    # exactly one whitespace byte terminates the maxval token; the pixel
    # bytes that follow may themselves look like whitespace
    pos = len(magic)
    fields = []
    for _ in range(3):
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: malformed header")
        fields.append(buf[start:pos])
    pos += 1  # the single separator after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError:
        raise FormatError(f"{path}: malformed header") from None
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    data = buf[pos : pos + h * w * channels]
    if len(data) != h * w * channels:
        raise FormatError(f"{path}: truncated pixel data")
    arr = np.frombuffer(data, dtype=np.uint8)
    return arr.reshape((h, w) if channels == 1 else (h, w, 3)).copy()


def read_pgm(path) -> np.ndarray:
    return _read_netpbm(path, b"P5", 1)


def read_ppm(path) -> np.ndarray:
    return _read_netpbm(path, b"P6", 3)
