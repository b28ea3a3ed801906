"""Monte-Carlo check that the common and mean-individual noise estimators agree in expectation.

At one voxel pair, subject ``i`` contributes a difference ``D_i = U_i2 - U_i1``
with ``U_ij ~ N(0, s_i^2)``. The common estimator
``sum((D - mean(D))^2) / (2 (I - 1))`` and the mean of the individual
estimators ``D_i^2 / 2`` both have expectation ``mean(s_i^2)``, including
when the ``s_i`` differ.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import TooFewSubjects
from .rng import substream

MIN_REPLICATES = 1000
CHUNK = 20000


@dataclass(frozen=True)
class AppendixReport:
    n_subjects: int
    n_replicates: int
    seed: int
    analytic_value: float
    mean_common: float
    mean_of_individuals: float
    se_common: float
    se_individuals: float
    z_common: float
    z_individuals: float
    mean_difference: float
    se_difference: float
    z_difference: float

    @property
    def passed(self) -> bool:
        return abs(self.z_common) <= 3 and abs(self.z_individuals) <= 3

    def to_text(self) -> str:
        lines = [f"{k} = {v!r}" for k, v in asdict(self).items()]
        lines.append(f"passed = {self.passed}")
        return "\n".join(lines) + "\n"


def _estimators(sds: np.ndarray, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    u = rng.standard_normal((n, sds.size, 2)) * sds[None, :, None]
    d = u[:, :, 1] - u[:, :, 0]
    centred = d - d.mean(axis=1, keepdims=True)
    common = np.sum(centred * centred, axis=1) / (2.0 * (sds.size - 1))
    individual = np.mean(d * d, axis=1) / 2.0
    return common, individual


def _z(mean: float, target: float, se: float) -> float:
    if se == 0:
        return 0.0 if mean == target else math.copysign(math.inf, mean - target)
    return (mean - target) / se


def verify_expectation_identity(n_subjects: int, n_replicates: int, noise_sds, seed: int = 0
                                ) -> AppendixReport:
    sds = np.asarray(noise_sds, dtype=float).ravel()
    if n_subjects < 2:
        raise TooFewSubjects("need at least two subjects")
    if sds.size != n_subjects:
        raise ValueError(f"expected {n_subjects} noise sds, got {sds.size}")
    if np.any(~np.isfinite(sds)) or np.any(sds <= 0):
        raise ValueError("noise sds must be positive and finite")
    if n_replicates < MIN_REPLICATES:
        raise ValueError(f"need at least {MIN_REPLICATES} replicates")

    # Fixed-size chunks with their own substreams keep results independent of how work is split.
    commons, individuals = [], []
    for c, start in enumerate(range(0, n_replicates, CHUNK)):
        n = min(CHUNK, n_replicates - start)
        a, b = _estimators(sds, n, substream(seed, "appendix", c))
        commons.append(a)
        individuals.append(b)
    common = np.concatenate(commons)
    individual = np.concatenate(individuals)
    diff = common - individual

    root_n = math.sqrt(n_replicates)
    target = float(np.mean(sds ** 2))
    se_c = float(common.std(ddof=1)) / root_n
    se_i = float(individual.std(ddof=1)) / root_n
    se_d = float(diff.std(ddof=1)) / root_n
    return AppendixReport(
        n_subjects, n_replicates, seed, target,
        float(common.mean()), float(individual.mean()), se_c, se_i,
        _z(float(common.mean()), target, se_c), _z(float(individual.mean()), target, se_i),
        float(diff.mean()), se_d, _z(float(diff.mean()), 0.0, se_d))
