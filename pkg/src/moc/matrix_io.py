"""Binary matrix files.

Layout (all little-endian):

    offset  size  field
    0       4     magic b"MOCM"
    4       2     format version, currently 1
    6       2     element width in bytes: 4 (float32) or 8 (float64)
    8       8     rows (uint64)
    16      8     cols (uint64)
    24      ...   rows * cols IEEE-754 values, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MOCM"
VERSION = 1
_HEADER = struct.Struct("<4sHHQQ")
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class MatrixFormatError(ValueError):
    pass


def dumps(m: np.ndarray, width: int = 8) -> bytes:
    m = np.asarray(m)
    if m.ndim != 2:
        raise MatrixFormatError(f"only 2-D matrices can be written, got shape {m.shape}")
    if width not in _DTYPES:
        raise MatrixFormatError(f"element width must be 4 or 8, got {width}")
    rows, cols = m.shape
    body = np.ascontiguousarray(m, dtype=_DTYPES[width]).tobytes()
    return _HEADER.pack(MAGIC, VERSION, width, rows, cols) + body


def loads(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise MatrixFormatError("truncated header")
    magic, version, width, rows, cols = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise MatrixFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise MatrixFormatError(f"unsupported version {version}")
    if width not in _DTYPES:
        raise MatrixFormatError(f"unsupported element width {width}")
    expected = _HEADER.size + rows * cols * width
    if len(buf) != expected:
        raise MatrixFormatError(f"file has {len(buf)} bytes, header implies {expected}")
    data = np.frombuffer(buf, dtype=_DTYPES[width], offset=_HEADER.size)
    return data.reshape(rows, cols).astype(np.float64)


def save(path, m: np.ndarray, width: int = 8) -> None:
    Path(path).write_bytes(dumps(m, width))


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())
