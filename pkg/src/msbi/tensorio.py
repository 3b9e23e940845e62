"""Binary tensor serialization and CSV export.

Layout (all little-endian): magic ``MSBI``, u16 format version, u8 rank,
u64 extent per axis, then the float64 payload in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["FORMAT_VERSION", "write_tensor", "read_tensor", "write_csv"]

_MAGIC = b"MSBI"
FORMAT_VERSION = 1
_MAX_RANK = 255


def write_tensor(path: str | Path, array: np.ndarray, allow_nonfinite: bool = False) -> None:
    """Serialize ``array`` as float64 to ``path``."""
    # ascontiguousarray would promote rank 0 to rank 1; keep the true shape.
    array = np.asarray(array, dtype=np.float64)
    if array.ndim > _MAX_RANK:
        raise ValueError(f"rank {array.ndim} exceeds format limit {_MAX_RANK}")
    if not allow_nonfinite and not np.all(np.isfinite(array)):
        raise ValueError("refusing to serialize non-finite values")
    header = _MAGIC + struct.pack("<HB", FORMAT_VERSION, array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape) if array.ndim else b""
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(array.astype("<f8").tobytes(order="C"))


def read_tensor(path: str | Path) -> np.ndarray:
    """Read a tensor written by :func:`write_tensor`."""
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    version, rank = struct.unpack_from("<HB", raw, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    offset = 7
    shape = struct.unpack_from(f"<{rank}Q", raw, offset) if rank else ()
    offset += 8 * rank
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    payload = raw[offset:]
    if len(payload) != 8 * count:
        raise ValueError(
            f"{path}: payload holds {len(payload) // 8} values, header promises {count}"
        )
    data = np.frombuffer(payload, dtype="<f8", count=count)
    return data.astype(np.float64).reshape(shape)


def write_csv(path: str | Path, array: np.ndarray, header: list[str] | None = None) -> None:
    """Write a 1-d or 2-d array as CSV with shortest round-trip float formatting."""
    array = np.asarray(array, dtype=np.float64)
    if array.ndim == 1:
        array = array[:, None]
    if array.ndim != 2:
        raise ValueError(f"csv export requires rank <= 2, got shape {array.shape}")
    if header is not None and len(header) != array.shape[1]:
        raise ValueError(
            f"header has {len(header)} names for {array.shape[1]} columns"
        )
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in array:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
