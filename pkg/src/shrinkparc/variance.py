"""Moment estimators for noise, total and signal variance, and shrinkage weights.

All estimators work per voxel pair on stacks of condensed matrices: an
``(I, P)`` array holds one row per subject and one column per unique voxel
pair. Lists of :class:`~shrinkparc.connectivity.ConnectivityMatrix` are
accepted wherever a stack is.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .connectivity import ShrinkageField, mean_rows, stack
from .errors import (
    AllZeroDifferences,
    DimensionMismatch,
    MissingReplicate,
    MixedSpace,
    TooFewSubjects,
    UnpairedSubject,
)


class Method(str, enum.Enum):
    COMMON = "C"
    INDIVIDUAL = "I"
    SCALED = "S"
    GLOBAL = "G"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        for m in cls:
            if key in (m.value.lower(), m.name.lower()):
                return m
        raise ValueError(f"unknown noise-variance method {value!r}")

    @property
    def per_subject(self) -> bool:
        return self in (Method.INDIVIDUAL, Method.SCALED)


ALL_METHODS = (Method.COMMON, Method.INDIVIDUAL, Method.SCALED, Method.GLOBAL)


@dataclass(frozen=True)
class NoiseVarianceField:
    """Noise variance per pair; shape (P,) when shared, (I, P) when per subject."""

    method: Method
    values: np.ndarray

    @property
    def per_subject(self) -> bool:
        return self.values.ndim == 2

    @property
    def scalar(self) -> float:
        if self.method is not Method.GLOBAL:
            raise ValueError("only the global field is a scalar")
        return float(self.values.flat[0])


@dataclass(frozen=True)
class SignalVarianceField:
    values: np.ndarray
    clamped_count: int = 0


@dataclass(frozen=True)
class ScalingFactors:
    gamma: np.ndarray


def _pair_stacks(session1, session2) -> tuple[np.ndarray, np.ndarray]:
    if not isinstance(session1, np.ndarray):
        session1, session2 = list(session1), list(session2)
        if len(session1) != len(session2):
            raise UnpairedSubject(
                f"{len(session1)} first-session vs {len(session2)} second-session matrices")
        for a, b in zip(session1, session2):
            if hasattr(a, "subject_id") and a.subject_id != b.subject_id:
                raise UnpairedSubject(f"subjects {a.subject_id!r} and {b.subject_id!r} differ")
            if hasattr(a, "space") and a.space is not b.space:
                raise MixedSpace("sessions are in different spaces")
    a, b = stack(session1), stack(session2)
    if a.shape != b.shape:
        raise DimensionMismatch(f"session stacks have shapes {a.shape} and {b.shape}")
    return a, b


def difference_matrices(session1, session2) -> np.ndarray:
    """D_i = W_i2 - W_i1 for every subject, as an (I, P) stack."""
    a, b = _pair_stacks(session1, session2)
    return b - a


def noise_variance_common(diffs) -> NoiseVarianceField:
    d = stack(diffs)
    n = d.shape[0]
    if n < 2:
        raise TooFewSubjects("common noise variance needs at least 2 subjects")
    centred = d - mean_rows(d)
    return NoiseVarianceField(Method.COMMON, np.einsum("ip,ip->p", centred, centred) / (2.0 * (n - 1)))


def noise_variance_individual(diffs) -> NoiseVarianceField:
    d = stack(diffs)
    if d.shape[0] < 1 or not np.all(np.isfinite(d)):
        raise MissingReplicate("every subject needs two finite replicates")
    return NoiseVarianceField(Method.INDIVIDUAL, 0.5 * d * d)


def scaling_factor(diffs) -> ScalingFactors:
    """gamma_i: subject mean squared difference over the grand mean of those."""
    d = stack(diffs)
    if d.shape[0] < 2:
        raise TooFewSubjects("scaling factors need at least 2 subjects")
    if d.shape[1] < 1:
        raise DimensionMismatch("scaling factors need at least 2 voxels")
    msd = np.mean(d * d, axis=1)
    grand = np.mean(msd)
    if grand <= 0.0:
        raise AllZeroDifferences("all test-retest differences are zero")
    return ScalingFactors(msd / grand)


def noise_variance_scaled(common: NoiseVarianceField, gamma: ScalingFactors) -> NoiseVarianceField:
    g = np.asarray(gamma.gamma, dtype=float)
    if np.any(g <= 0.0):
        raise ValueError("scaling factors must be positive")
    return NoiseVarianceField(Method.SCALED, g[:, None] * common.values[None, :])


def noise_variance_global(common: NoiseVarianceField) -> NoiseVarianceField:
    vals = common.values
    level = float(np.mean(vals))
    return NoiseVarianceField(Method.GLOBAL, np.full(vals.shape[-1], level))


def sampling_variance_ratio(global_noise: float, n_timepoints: int) -> float:
    """Global noise variance (Fisher z scale) over the sampling variance 1 / (T - 3).

    A diagnostic only: values well above 1 mean session-to-session variability
    dominates pure sampling error.
    """
    if n_timepoints < 4:
        raise ValueError("need at least 4 timepoints")
    return float(global_noise) * (n_timepoints - 3)


def adjust_global_for_split(global_half: float, theta, t_minutes: float) -> float:
    """Scale a half-length global noise variance up to the full scan length."""
    if global_half < 0:
        raise ValueError("noise variance must be nonnegative")
    return theta.predict(t_minutes) * global_half


def total_variance(sessions) -> np.ndarray:
    """Mean over sessions of the between-subject sample variance (I - 1 denominator).

    ``sessions`` is a sequence of (I, P) stacks, one per session.
    """
    stacks = [stack(s) for s in sessions]
    if not stacks:
        raise ValueError("need at least one session")
    shape = stacks[0].shape
    if any(s.shape != shape for s in stacks):
        raise DimensionMismatch("sessions have different shapes")
    n = shape[0]
    if n < 2:
        raise TooFewSubjects("total variance needs at least 2 subjects")
    acc = np.zeros(shape[1])
    for s in stacks:
        centred = s - mean_rows(s)
        acc += np.einsum("ip,ip->p", centred, centred) / (n - 1)
    return acc / len(stacks)


def signal_variance(total, noise) -> SignalVarianceField:
    """total - noise, clamped below at zero."""
    total = np.asarray(total, dtype=float)
    noise = np.asarray(getattr(noise, "values", noise), dtype=float)
    if noise.shape != total.shape:
        raise DimensionMismatch("total and noise variance fields differ in shape")
    diff = total - noise
    negative = diff < 0.0
    return SignalVarianceField(np.where(negative, 0.0, diff), int(negative.sum()))


def lambda_values(noise, signal) -> np.ndarray:
    """noise / (signal + noise), with 1 where both vanish. Broadcasts."""
    noise = np.asarray(noise, dtype=float)
    signal = np.asarray(signal, dtype=float)
    denom = signal + noise
    with np.errstate(invalid="ignore", divide="ignore"):
        lam = np.where(denom > 0.0, noise / np.where(denom > 0.0, denom, 1.0), 1.0)
    return np.clip(lam, 0.0, 1.0)


def shrinkage_parameter(noise: NoiseVarianceField, signal: SignalVarianceField,
                        subject_ids: Optional[Sequence[str]] = None) -> list[ShrinkageField]:
    """Shrinkage weights; one shared field, or one per subject for per-subject noise."""
    if np.any(noise.values < 0) or np.any(signal.values < 0):
        raise ValueError("variance fields must be nonnegative")
    lam = lambda_values(noise.values, signal.values)
    if lam.ndim == 1:
        return [ShrinkageField(lam, None, signal.clamped_count)]
    ids = list(subject_ids) if subject_ids is not None else [str(i) for i in range(lam.shape[0])]
    return [ShrinkageField(row, sid, signal.clamped_count) for row, sid in zip(lam, ids)]


SIGNAL_SOURCES = ("matched", "common", "global")


@dataclass
class ShrinkageEstimate:
    """Everything :func:`estimate_shrinkage` derives for one method."""

    method: Method
    lam: np.ndarray          # (P,) shared or (I, P)
    noise: NoiseVarianceField
    signal: SignalVarianceField
    total: np.ndarray
    gamma: Optional[ScalingFactors] = None
    global_level: Optional[float] = None
    extras: dict = field(default_factory=dict)

    def per_subject_lambda(self, n_subjects: int) -> np.ndarray:
        return np.broadcast_to(self.lam, (n_subjects, self.lam.shape[-1]))


def estimate_shrinkage(method, first, second, total_sessions, *,
                       global_level: Optional[float] = None,
                       signal_source: str = "matched") -> ShrinkageEstimate:
    """Noise, signal and shrinkage weights for one noise-variance method.

    ``first``/``second`` are the (I, P) stacks whose differences measure noise.
    ``total_sessions`` are the stacks the total variance is averaged over.
    ``global_level`` overrides the global noise level (e.g. after a scan-length
    adjustment or when it comes from separate data). ``signal_source`` picks the
    noise field subtracted from the total: ``matched`` uses the global level for
    the global method and the common field otherwise.
    """
    method = Method.parse(method)
    if signal_source not in SIGNAL_SOURCES:
        raise ValueError(f"signal_source must be one of {SIGNAL_SOURCES}")
    d = difference_matrices(first, second)
    common = noise_variance_common(d)
    total = total_variance(total_sessions)
    if total.shape != common.values.shape:
        raise DimensionMismatch("total-variance sessions do not match the noise pair")
    if global_level is None:
        global_level = noise_variance_global(common).scalar
    global_field = NoiseVarianceField(Method.GLOBAL, np.full(common.values.shape, global_level))

    use_global = signal_source == "global" or (signal_source == "matched" and method is Method.GLOBAL)
    signal = signal_variance(total, global_field if use_global else common)

    gamma = None
    if method is Method.COMMON:
        noise = common
    elif method is Method.INDIVIDUAL:
        noise = noise_variance_individual(d)
    elif method is Method.SCALED:
        gamma = scaling_factor(d)
        noise = noise_variance_scaled(common, gamma)
    else:
        noise = global_field
    lam = lambda_values(noise.values, signal.values)
    return ShrinkageEstimate(method, lam, noise, signal, total, gamma, global_level)
