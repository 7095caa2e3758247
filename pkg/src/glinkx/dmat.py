"""DMAT1 binary matrix format.

Layout: 8 magic bytes ``b"DMAT1\\x00\\x00\\x00"``, little-endian u64 row
count, little-endian u64 column count, then rows*cols little-endian f32
values in row-major order.  Used on disk for features, positional
embeddings, soft labels, and any other dense matrix artifact.
"""

import struct

import numpy as np

from .errors import DimensionError, FormatError

MAGIC = b"DMAT1\x00\x00\x00"
_HEADER = struct.Struct("<8sQQ")


def write_dmat(path, matrix):
    """Write a 2-D array to ``path`` in DMAT1 format (values stored as f32)."""
    arr = np.ascontiguousarray(matrix, dtype=np.float32)
    if arr.ndim != 2:
        raise DimensionError(f"DMAT1 stores 2-D matrices, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes(order="C"))


def read_dmat(path, expected_rows=None):
    """Read a DMAT1 file and return a float32 array of shape (rows, cols).

    Raises FormatError on a bad magic or a truncated payload, and
    DimensionError when ``expected_rows`` is given and does not match.
    """
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FormatError(f"{path}: truncated DMAT1 header")
        magic, rows, cols = _HEADER.unpack(header)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        payload = fh.read(rows * cols * 4)
        if len(payload) != rows * cols * 4:
            raise FormatError(
                f"{path}: truncated payload, expected {rows * cols * 4} bytes, "
                f"got {len(payload)}"
            )
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    if expected_rows is not None and rows != expected_rows:
        raise DimensionError(
            f"{path}: has {rows} rows, expected {expected_rows}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(rows, cols)
    return np.ascontiguousarray(data)
