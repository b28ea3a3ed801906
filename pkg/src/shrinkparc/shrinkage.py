"""Shrink a group of subject correlation matrices with one noise-variance method."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .connectivity import Space, fisher_z, inverse_fisher_z, mean_rows, shrink
from .variance import Method, ShrinkageEstimate, estimate_shrinkage, noise_variance_common


@dataclass
class ShrunkGroup:
    estimate: ShrinkageEstimate
    shrunk: np.ndarray  # (I, P) correlations
    lam: np.ndarray     # (I, P)

    @property
    def degree(self) -> np.ndarray:
        """Mean shrinkage weight per subject."""
        return self.lam.mean(axis=1)


def to_space(r: np.ndarray, space: Space) -> np.ndarray:
    return fisher_z(r) if space is Space.FISHER_Z else np.asarray(r, dtype=float)


def from_space(x: np.ndarray, space: Space) -> np.ndarray:
    return inverse_fisher_z(x) if space is Space.FISHER_Z else x


def split_global_level(first: np.ndarray, second: np.ndarray, space, theta, t_minutes: float) -> float:
    """Global noise from half-length pseudo sessions scaled to the full length."""
    space = Space.parse(space)
    d = to_space(second, space) - to_space(first, space)
    half = float(np.mean(noise_variance_common(d).values))
    return theta.predict(t_minutes) * half


def pair_global_level(first: np.ndarray, second: np.ndarray, space) -> float:
    space = Space.parse(space)
    d = to_space(second, space) - to_space(first, space)
    return float(np.mean(noise_variance_common(d).values))


def shrink_group(raw: np.ndarray, first: np.ndarray, second: np.ndarray,
                 total_sessions: Sequence[np.ndarray], method, space=Space.FISHER_Z, *,
                 global_level: Optional[float] = None,
                 signal_source: str = "matched") -> ShrunkGroup:
    """Shrink correlation stack ``raw`` (I, P) toward its group mean.

    Every input is a stack of condensed correlations; they are moved into
    ``space`` before estimating variances and shrinking, and the result is
    returned as correlations.
    """
    space = Space.parse(space)
    method = Method.parse(method)
    x = to_space(raw, space)
    est = estimate_shrinkage(method, to_space(first, space), to_space(second, space),
                             [to_space(s, space) for s in total_sessions],
                             global_level=global_level, signal_source=signal_source)
    lam = np.array(est.per_subject_lambda(x.shape[0]))
    out = from_space(shrink(x, mean_rows(x), lam), space)
    return ShrunkGroup(est, out, lam)
