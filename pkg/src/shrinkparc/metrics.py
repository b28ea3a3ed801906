"""Reliability metrics: MSE of connectivity estimates and Dice of parcellations."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyInput, EmptySubset


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=float)


def matrix_mse(estimate, truth) -> float:
    """Mean squared difference over unique voxel pairs (condensed inputs)."""
    a, b = _values(estimate), _values(truth)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    if hasattr(estimate, "space") and hasattr(truth, "space") and estimate.space is not truth.space:
        raise DimensionMismatch("estimate and truth are in different spaces")
    diff = a - b
    return float(np.mean(diff * diff))


def _labels(p) -> np.ndarray:
    return np.asarray(getattr(p, "labels", p))


def _pair_count(n: np.ndarray) -> float:
    return float(np.sum(n * (n - 1) // 2))


def _dice_labels(a: np.ndarray, b: np.ndarray) -> float:
    # Same-label pair sets via the contingency table: C(n, 2) summed per cell.
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    ia, ib = ia.ravel(), ib.ravel()
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    both = _pair_count(table)
    size_a = _pair_count(table.sum(axis=1))
    size_b = _pair_count(table.sum(axis=0))
    if size_a + size_b == 0:
        # Neither parcellation puts any two voxels together: identical relations.
        return 1.0
    return 2.0 * both / (size_a + size_b)


def dice(a, b) -> float:
    la, lb = _labels(a), _labels(b)
    if la.shape != lb.shape:
        raise DimensionMismatch(f"parcellations cover {la.size} and {lb.size} voxels")
    return _dice_labels(la, lb)


def dice_restricted(a, b, voxel_subset) -> float:
    """Dice over pairs with both voxels inside ``voxel_subset``."""
    la, lb = _labels(a), _labels(b)
    if la.shape != lb.shape:
        raise DimensionMismatch(f"parcellations cover {la.size} and {lb.size} voxels")
    subset = np.unique(np.asarray(voxel_subset, dtype=np.int64))
    if subset.size == 0:
        raise EmptySubset("voxel subset is empty")
    if subset[0] < 0 or subset[-1] >= la.size:
        raise IndexError("voxel subset index out of range")
    return _dice_labels(la[subset], lb[subset])


def percent_decrease(raw: float, shrunk: float) -> float:
    return 100.0 * (raw - shrunk) / raw


def percent_increase(raw: float, shrunk: float) -> float:
    return 100.0 * (shrunk - raw) / raw


def _median(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.median(x)) if x.size else float("nan")


@dataclass
class ReliabilityReport:
    """Per-subject reliability of raw and shrunk estimates, with median summaries."""

    subject_ids: list
    mse_raw: np.ndarray = field(default_factory=lambda: np.array([]))
    mse_shrunk: np.ndarray = field(default_factory=lambda: np.array([]))
    dice_raw: np.ndarray = field(default_factory=lambda: np.array([]))
    dice_shrunk: np.ndarray = field(default_factory=lambda: np.array([]))
    mean_lambda: np.ndarray = field(default_factory=lambda: np.array([]))
    label: str = ""

    @property
    def median_mse_raw(self) -> float:
        return _median(self.mse_raw)

    @property
    def median_mse_shrunk(self) -> float:
        return _median(self.mse_shrunk)

    @property
    def median_dice_raw(self) -> float:
        return _median(self.dice_raw)

    @property
    def median_dice_shrunk(self) -> float:
        return _median(self.dice_shrunk)

    @property
    def mse_percent_decrease(self) -> float:
        return percent_decrease(self.median_mse_raw, self.median_mse_shrunk)

    @property
    def dice_percent_increase(self) -> float:
        return percent_increase(self.median_dice_raw, self.median_dice_shrunk)

    def subject_rows(self) -> list[dict]:
        n = len(self.subject_ids)
        cols = {"mse_raw": self.mse_raw, "mse_shrunk": self.mse_shrunk,
                "dice_raw": self.dice_raw, "dice_shrunk": self.dice_shrunk,
                "mean_lambda": self.mean_lambda}
        cols = {k: v for k, v in cols.items() if len(v) == n}
        return [{"label": self.label, "subject": sid, **{k: float(v[i]) for k, v in cols.items()}}
                for i, sid in enumerate(self.subject_ids)]

    def summary_row(self) -> dict:
        row = {"label": self.label, "n_subjects": len(self.subject_ids)}
        if len(self.mse_raw):
            row.update(median_mse_raw=self.median_mse_raw, median_mse_shrunk=self.median_mse_shrunk,
                       mse_percent_decrease=self.mse_percent_decrease)
        if len(self.dice_raw):
            row.update(median_dice_raw=self.median_dice_raw,
                       median_dice_shrunk=self.median_dice_shrunk,
                       dice_percent_increase=self.dice_percent_increase)
        if len(self.mean_lambda):
            row["median_mean_lambda"] = _median(self.mean_lambda)
        return row


def summarize(subject_ids: Sequence, *, mse_raw=(), mse_shrunk=(), dice_raw=(), dice_shrunk=(),
              mean_lambda=(), label: str = "") -> ReliabilityReport:
    if len(subject_ids) == 0:
        raise EmptyInput("no subjects to summarize")
    arrays = {name: np.asarray(v, dtype=float) for name, v in
              dict(mse_raw=mse_raw, mse_shrunk=mse_shrunk, dice_raw=dice_raw,
                   dice_shrunk=dice_shrunk, mean_lambda=mean_lambda).items()}
    if all(a.size == 0 for a in arrays.values()):
        raise EmptyInput("no metric values to summarize")
    for name, a in arrays.items():
        if a.size not in (0, len(subject_ids)):
            raise DimensionMismatch(f"{name} has {a.size} values for {len(subject_ids)} subjects")
    return ReliabilityReport(list(subject_ids), label=label, **arrays)


def reports_to_csv(reports: Sequence[ReliabilityReport], summary: bool = False) -> str:
    rows = [r.summary_row() for r in reports] if summary else \
        [row for r in reports for row in r.subject_rows()]
    if not rows:
        return ""
    fields: list[str] = []
    for row in rows:
        fields.extend(k for k in row if k not in fields)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()

