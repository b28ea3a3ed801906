"""Reading and writing matrices, parcellations, manifests and result files.

Matrices are stored either as headered CSV (``v0,v1,...``, values printed
with ``%.17g`` so they round-trip exactly) or in a small binary format: a
16-byte header (magic ``SHPC``, little-endian u32 rows, u32 cols, four zero
bytes) followed by row-major little-endian float64 values.
"""
from __future__ import annotations

import csv
import os
import struct
import tempfile
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from .connectivity import TimeSeriesMatrix
from .errors import ShrinkParcError
from .spectral import Parcellation

PathLike = Union[str, os.PathLike]

MAGIC = b"SHPC"
_HEADER = struct.Struct("<4sII4x")


class FileFormatError(ShrinkParcError):
    """A file exists but its contents cannot be parsed."""


def atomic_write(path: PathLike, data: Union[str, bytes]) -> None:
    """Write via a temporary file in the same directory and rename on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def matrix_to_csv(values: np.ndarray) -> str:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    lines = [",".join(f"v{j}" for j in range(values.shape[1]))]
    lines.extend(",".join(f"{x:.17g}" for x in row) for row in values)
    return "\n".join(lines) + "\n"


def matrix_to_bytes(values: np.ndarray) -> bytes:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    rows, cols = values.shape
    return _HEADER.pack(MAGIC, rows, cols) + values.astype("<f8").tobytes(order="C")


def matrix_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise FileFormatError("binary matrix shorter than its header")
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FileFormatError("binary matrix does not start with SHPC")
    body = data[_HEADER.size:]
    if len(body) != rows * cols * 8:
        raise FileFormatError(f"binary body has {len(body)} bytes, header says {rows}x{cols}")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(float)


def write_matrix(path: PathLike, values: np.ndarray, binary: bool = False) -> None:
    atomic_write(path, matrix_to_bytes(values) if binary else matrix_to_csv(values))


def read_matrix(path: PathLike) -> np.ndarray:
    """Read a CSV or binary matrix; the format is detected from the leading bytes."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return matrix_from_bytes(path.read_bytes())
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
        return frame.to_numpy(dtype=float)
    except (ValueError, pd.errors.ParserError) as exc:
        raise FileFormatError(f"{path}: {exc}") from exc


def parcellation_to_csv(p: Parcellation) -> str:
    lines = ["voxel_index,label"]
    lines.extend(f"{v},{int(l)}" for v, l in enumerate(p.labels))
    return "\n".join(lines) + "\n"


def write_parcellation(path: PathLike, p: Parcellation) -> None:
    atomic_write(path, parcellation_to_csv(p))


def read_parcellation(path: PathLike) -> Parcellation:
    try:
        frame = pd.read_csv(path)
        frame = frame.sort_values("voxel_index")
        idx = frame["voxel_index"].to_numpy()
        labels = frame["label"].to_numpy(dtype=np.int64)
    except (KeyError, ValueError, pd.errors.ParserError) as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
    if not np.array_equal(idx, np.arange(idx.size)):
        raise FileFormatError(f"{path}: voxel_index must cover 0..V-1 exactly once")
    # Arbitrary integer labels are mapped onto 0..k-1, keeping their sorted order.
    values, dense = np.unique(labels, return_inverse=True)
    return Parcellation(dense.ravel(), int(values.size))


def read_manifest(path: PathLike) -> dict:
    """Load every time-series matrix named in a (subject_id, session_id, path) manifest.

    Relative paths resolve against the manifest's directory. Subjects keep
    their first-appearance order and sessions are sorted by session_id.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"subject_id", "session_id", "path"} - set(reader.fieldnames or ())
        if missing:
            raise FileFormatError(f"{path}: manifest lacks columns {sorted(missing)}")
        entries = list(reader)
    if not entries:
        raise FileFormatError(f"{path}: manifest lists no files")
    grouped: dict = {}
    for row in entries:
        grouped.setdefault(row["subject_id"], []).append(row)
    sessions = {}
    for sid, rows in grouped.items():
        rows.sort(key=lambda r: r["session_id"])
        sessions[sid] = [TimeSeriesMatrix(read_matrix(path.parent / r["path"]), sid, r["session_id"])
                         for r in rows]
    return sessions


def write_frame(path: PathLike, frame: pd.DataFrame) -> None:
    atomic_write(path, frame.to_csv(index=False, float_format="%.17g", lineterminator="\n"))
