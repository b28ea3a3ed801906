"""Pairwise connectivity matrices, the Fisher transform, and the shrinkage rule.

Symmetric V x V matrices are held in condensed form: the strict upper
triangle in row-major order (the ordering of ``np.triu_indices(V, 1)``,
identical to ``scipy.spatial.distance.squareform``). Diagonals are implied by
the space: 1 for correlations, 0 for Fisher-z values.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    LambdaOutOfRange,
    MixedSpace,
    OutOfRange,
    ShrinkParcError,
    TooFewSubjects,
    ZeroVarianceVoxel,
)

log = logging.getLogger(__name__)

# |r| is kept strictly below 1 so the Fisher transform stays finite.
CORRELATION_CLAMP = 1.0 - 1e-12
_TANH_CEIL = np.nextafter(1.0, 0.0)


class Space(str, enum.Enum):
    CORRELATION = "correlation"
    FISHER_Z = "fisher_z"

    @classmethod
    def parse(cls, value) -> "Space":
        if isinstance(value, cls):
            return value
        aliases = {"correlation": cls.CORRELATION, "corr": cls.CORRELATION, "r": cls.CORRELATION,
                   "fisher_z": cls.FISHER_Z, "fisherz": cls.FISHER_Z, "fisher": cls.FISHER_Z,
                   "z": cls.FISHER_Z}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown space {value!r}") from None


@lru_cache(maxsize=32)
def triu_indices(n_voxels: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.triu_indices(n_voxels, 1)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def n_pairs(n_voxels: int) -> int:
    return n_voxels * (n_voxels - 1) // 2


def voxels_from_pairs(n: int) -> int:
    v = int(round((1 + math.sqrt(1 + 8 * n)) / 2))
    if n_pairs(v) != n:
        raise DimensionMismatch(f"{n} is not a triangular pair count")
    return v


def condense(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {matrix.shape}")
    rows, cols = triu_indices(matrix.shape[0])
    return matrix[rows, cols]


def expand(values: np.ndarray, diagonal: float = 0.0) -> np.ndarray:
    """Dense symmetric matrix from a condensed vector."""
    values = np.asarray(values, dtype=float)
    v = voxels_from_pairs(values.shape[-1])
    rows, cols = triu_indices(v)
    out = np.empty((v, v))
    out[rows, cols] = values
    out[cols, rows] = values
    np.fill_diagonal(out, diagonal)
    return out


@dataclass(frozen=True)
class TimeSeriesMatrix:
    """Observed T x V signal for one subject-session."""

    values: np.ndarray
    subject_id: str = ""
    session_id: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DimensionMismatch(f"time series must be T x V, got shape {values.shape}")
        if values.shape[0] < 4:
            raise ShrinkParcError(f"need at least 4 timepoints, got {values.shape[0]}")
        if values.shape[1] < 2:
            raise ShrinkParcError("need at least 2 voxels")
        if not np.all(np.isfinite(values)):
            raise ShrinkParcError("time series contains non-finite entries")
        object.__setattr__(self, "values", values)

    @property
    def n_timepoints(self) -> int:
        return self.values.shape[0]

    @property
    def n_voxels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ConnectivityMatrix:
    values: np.ndarray  # condensed upper triangle
    space: Space = Space.CORRELATION
    subject_id: str = ""
    session_id: str = ""
    n_clamped: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise DimensionMismatch("ConnectivityMatrix.values must be condensed (1-d)")
        voxels_from_pairs(values.size)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "space", Space.parse(self.space))

    @property
    def n_voxels(self) -> int:
        return voxels_from_pairs(self.values.size)

    def dense(self) -> np.ndarray:
        return expand(self.values, 1.0 if self.space is Space.CORRELATION else 0.0)

    @classmethod
    def from_dense(cls, matrix, space=Space.CORRELATION, subject_id="", session_id="",
                   atol: float = 1e-12) -> "ConnectivityMatrix":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {matrix.shape}")
        if not np.allclose(matrix, matrix.T, atol=atol, rtol=0):
            raise ShrinkParcError("matrix is not symmetric")
        return cls(condense(matrix), space, subject_id, session_id)


@dataclass(frozen=True)
class GroupMeanMatrix:
    values: np.ndarray
    space: Space
    session_id: str = ""
    n_subjects: int = 0

    @property
    def n_voxels(self) -> int:
        return voxels_from_pairs(self.values.size)

    def dense(self) -> np.ndarray:
        return expand(self.values, 1.0 if self.space is Space.CORRELATION else 0.0)


@dataclass(frozen=True)
class ShrinkageField:
    """Per-pair weight on the group mean. ``subject_id`` None means shared."""

    values: np.ndarray
    subject_id: Optional[str] = None
    clamped: int = field(default=0, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)

    @property
    def shared(self) -> bool:
        return self.subject_id is None

    @property
    def degree(self) -> float:
        """Mean weight over unique voxel pairs."""
        return float(np.mean(self.values))


def demean_columns(values: np.ndarray) -> np.ndarray:
    """Subtract each column's mean."""
    x = np.asarray(values, dtype=float)
    return x - x.mean(axis=0)


def pearson_condensed(values: np.ndarray) -> tuple[np.ndarray, int]:
    """Condensed Pearson correlations of the columns of a T x V array.

    Returns the correlations and the number of entries clamped away from +-1.
    """
    x = np.asarray(values, dtype=float)
    x = x - x.mean(axis=0)
    ss = np.einsum("ij,ij->j", x, x)
    zero = np.flatnonzero(ss <= 0.0)
    if zero.size:
        raise ZeroVarianceVoxel(int(zero[0]))
    # (T-1) cancels between covariance and the two standard deviations.
    scale = 1.0 / np.sqrt(ss)
    xs = x * scale
    rows, cols = triu_indices(x.shape[1])
    r = (xs.T @ xs)[rows, cols]
    over = np.abs(r) > CORRELATION_CLAMP
    n_clamped = int(over.sum())
    if n_clamped:
        np.clip(r, -CORRELATION_CLAMP, CORRELATION_CLAMP, out=r)
    return r, n_clamped


def compute_correlation(ts: TimeSeriesMatrix) -> ConnectivityMatrix:
    r, n_clamped = pearson_condensed(ts.values)
    if n_clamped:
        log.warning("%d correlation(s) at +-1 clamped for subject %r session %r",
                    n_clamped, ts.subject_id, ts.session_id)
    return ConnectivityMatrix(r, Space.CORRELATION, ts.subject_id, ts.session_id, n_clamped)


def fisher_z(r: np.ndarray) -> np.ndarray:
    """z(r) = 0.5 * log((1 + r) / (1 - r)), elementwise, with +-1 clamped."""
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(r) > 1.0) or not np.all(np.isfinite(r)):
        raise OutOfRange("correlation outside [-1, 1]")
    return np.arctanh(np.clip(r, -CORRELATION_CLAMP, CORRELATION_CLAMP))


def inverse_fisher_z(z: np.ndarray) -> np.ndarray:
    """(exp(2z) - 1) / (exp(2z) + 1), kept strictly inside (-1, 1)."""
    r = np.tanh(np.asarray(z, dtype=float))
    return np.clip(r, -_TANH_CEIL, _TANH_CEIL)


def fisher_transform(c: ConnectivityMatrix) -> ConnectivityMatrix:
    if c.space is not Space.CORRELATION:
        raise MixedSpace("fisher_transform expects a correlation matrix")
    n_clamped = int(np.sum(np.abs(c.values) > CORRELATION_CLAMP))
    return ConnectivityMatrix(fisher_z(c.values), Space.FISHER_Z, c.subject_id, c.session_id,
                              c.n_clamped + n_clamped)


def inverse_fisher(z: ConnectivityMatrix) -> ConnectivityMatrix:
    if z.space is not Space.FISHER_Z:
        raise MixedSpace("inverse_fisher expects a Fisher-z matrix")
    return ConnectivityMatrix(inverse_fisher_z(z.values), Space.CORRELATION, z.subject_id,
                              z.session_id)


def stack(matrices) -> np.ndarray:
    """(I, P) array from connectivity matrices or condensed arrays."""
    if isinstance(matrices, np.ndarray):
        arr = np.asarray(matrices, dtype=float)
    else:
        arr = np.asarray([m.values if hasattr(m, "values") else m for m in matrices],
                         dtype=float)
    if arr.ndim != 2:
        raise DimensionMismatch("expected a sequence of condensed matrices of equal size")
    return arr


def mean_rows(arr: np.ndarray) -> np.ndarray:
    """Arithmetic mean over axis 0, summed in row order.

    Deviations from the first row are accumulated, so identical rows give
    back that row exactly and constant columns have zero spread.
    """
    base = np.array(arr[0], dtype=float)
    acc = np.zeros(arr.shape[1])
    for row in arr[1:]:
        acc += row - base
    return base + acc / arr.shape[0]


def group_mean(cs: Sequence[ConnectivityMatrix]) -> GroupMeanMatrix:
    cs = list(cs)
    if len(cs) < 2:
        raise TooFewSubjects("group mean needs at least 2 matrices")
    spaces = {c.space for c in cs}
    if len(spaces) > 1:
        raise MixedSpace("matrices are in different spaces")
    sizes = {c.values.size for c in cs}
    if len(sizes) > 1:
        raise DimensionMismatch("matrices have different sizes")
    sessions = {c.session_id for c in cs}
    session_id = sessions.pop() if len(sessions) == 1 else ""
    return GroupMeanMatrix(mean_rows(stack(cs)), cs[0].space, session_id, len(cs))


def shrink(raw: np.ndarray, mean: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """lam * mean + (1 - lam) * raw, clipped into [min(raw, mean), max(raw, mean)].

    Broadcasts, so ``raw`` may be a (I, P) stack with ``mean`` of shape (P,).
    """
    out = lam * mean + (1.0 - lam) * raw
    lo = np.minimum(raw, mean)
    hi = np.maximum(raw, mean)
    return np.clip(out, lo, hi)


def apply_shrinkage(raw: ConnectivityMatrix, mean: GroupMeanMatrix,
                    lam: ShrinkageField) -> ConnectivityMatrix:
    if raw.space is not mean.space:
        raise MixedSpace("raw and group mean are in different spaces")
    if not (raw.values.shape == mean.values.shape == lam.values.shape):
        raise DimensionMismatch("raw, mean and lambda must have the same number of pairs")
    if np.any(lam.values < 0.0) or np.any(lam.values > 1.0) or np.any(np.isnan(lam.values)):
        raise LambdaOutOfRange("shrinkage weights must lie in [0, 1]")
    return ConnectivityMatrix(shrink(raw.values, mean.values, lam.values), raw.space,
                              raw.subject_id, raw.session_id)
