"""Flat binary container for named float64 arrays.

Layout, all integers unsigned 64-bit little-endian:

    magic   b"AIB1"
    count   number of named arrays
    per array:
        name-length, UTF-8 name bytes, rank, one extent per axis,
        row-major float64 little-endian data

Array order is preserved, so saving the same values in the same order is
byte-identical.
"""

from __future__ import annotations

import struct

import numpy as np

from .exceptions import FormatError

MAGIC = b"AIB1"
_U64 = struct.Struct("<Q")


def save_arrays(path, arrays) -> None:
    """Write an ordered mapping (or (name, array) pairs) of arrays to ``path``."""
    items = list(arrays.items()) if hasattr(arrays, "items") else list(arrays)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_U64.pack(len(items)))
        for name, arr in items:
            # ascontiguousarray would promote rank-0 to rank-1
            data = np.asarray(arr, dtype=np.float64)
            if data.ndim and not data.flags.c_contiguous:
                data = np.ascontiguousarray(data)
            encoded = name.encode("utf-8")
            fh.write(_U64.pack(len(encoded)))
            fh.write(encoded)
            fh.write(_U64.pack(data.ndim))
            for extent in data.shape:
                fh.write(_U64.pack(extent))
            fh.write(data.astype("<f8", copy=False).tobytes())


def _read_exact(fh, n: int, what: str):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(
            f"truncated checkpoint: wanted {n} bytes for {what} at offset "
            f"{fh.tell() - len(buf)}, got {len(buf)}"
        )
    return buf


def load_arrays(path) -> dict[str, np.ndarray]:
    """Read a container written by ``save_arrays``; order is preserved."""
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise FormatError(
                f"bad checkpoint magic {magic!r} at offset 0 (expected {MAGIC!r})"
            )
        (count,) = _U64.unpack(_read_exact(fh, 8, "array count"))
        for i in range(count):
            (name_len,) = _U64.unpack(_read_exact(fh, 8, f"name length #{i}"))
            name = _read_exact(fh, name_len, f"name #{i}").decode("utf-8")
            (rank,) = _U64.unpack(_read_exact(fh, 8, f"rank of {name!r}"))
            shape = tuple(
                _U64.unpack(_read_exact(fh, 8, f"extent of {name!r}"))[0]
                for _ in range(rank)
            )
            n_elems = 1
            for extent in shape:
                n_elems *= extent
            raw = _read_exact(fh, 8 * n_elems, f"data of {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise FormatError(
                f"trailing bytes after last array at offset {fh.tell() - 1}"
            )
    return out
