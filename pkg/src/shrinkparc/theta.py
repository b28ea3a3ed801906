"""Scan-length adjustment for global noise variance from split scans.

Noise variance estimated from half-length pseudo sessions overstates the
noise of the full scan. ``theta(t) = sigma2(t) / sigma2(t / 2)`` corrects it
and is modelled as ``beta0 + beta1 * log(t)`` with ``t`` in minutes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .connectivity import Space, TimeSeriesMatrix, fisher_z, pearson_condensed
from .errors import InsufficientLength, NonpositiveTheta
from .rng import substream
from .variance import noise_variance_common

DEFAULT_BETA0 = 0.590
DEFAULT_BETA1 = 0.129
DEFAULT_LENGTHS = (2.0, 3.0, 4.0, 5.0, 6.0, 7.0)


@dataclass(frozen=True)
class ThetaModel:
    beta0: float = DEFAULT_BETA0
    beta1: float = DEFAULT_BETA1
    fitted_points: tuple = ()
    se_beta0: float = float("nan")
    se_beta1: float = float("nan")
    adj_r2: float = float("nan")
    noise_by_length: tuple = field(default=(), compare=False)

    def predict(self, t_minutes: float) -> float:
        if t_minutes <= 0:
            raise ValueError("scan length must be positive")
        theta = self.beta0 + self.beta1 * math.log(t_minutes)
        if theta <= 0:
            raise NonpositiveTheta(f"theta({t_minutes}) = {theta:.6g} is not positive")
        return theta

    def to_text(self) -> str:
        lines = [f"beta0 = {self.beta0!r}", f"beta1 = {self.beta1!r}",
                 f"se_beta0 = {self.se_beta0!r}", f"se_beta1 = {self.se_beta1!r}",
                 f"adj_r2 = {self.adj_r2!r}"]
        for t, th in self.fitted_points:
            lines.append(f"point = {t!r} {th!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ThetaModel":
        values: dict = {}
        points = []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key == "point":
                t, th = val.split()
                points.append((float(t), float(th)))
            else:
                values[key] = float(val)
        if "beta0" not in values or "beta1" not in values:
            raise ValueError("theta model text needs beta0 and beta1")
        return cls(values["beta0"], values["beta1"], tuple(points),
                   values.get("se_beta0", float("nan")), values.get("se_beta1", float("nan")),
                   values.get("adj_r2", float("nan")))


DEFAULT_THETA = ThetaModel()


def fit_line(x, y) -> tuple[float, float, float, float, float]:
    """OLS of y on x: (b0, b1, se_b0, se_b1, adjusted R^2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    design = np.column_stack([np.ones(n), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    dof = n - 2
    if dof > 0:
        s2 = float(resid @ resid) / dof
        cov = s2 * np.linalg.inv(design.T @ design)
        se0, se1 = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
        sst = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else float("nan")
        adj = 1.0 - (1.0 - r2) * (n - 1) / dof
    else:
        se0 = se1 = adj = float("nan")
    return float(coef[0]), float(coef[1]), se0, se1, adj


def _window_global_noise(scans, n_points: int, rng: np.random.Generator, space: Space) -> float:
    firsts, seconds = [], []
    for s1, s2 in scans:
        pair = []
        for ts in (s1, s2):
            start = int(rng.integers(0, ts.shape[0] - n_points + 1))
            r, _ = pearson_condensed(ts[start:start + n_points])
            pair.append(fisher_z(r) if space is Space.FISHER_Z else r)
        firsts.append(pair[0])
        seconds.append(pair[1])
    d = np.asarray(seconds) - np.asarray(firsts)
    return float(np.mean(noise_variance_common(d).values))


def fit_theta_model(scans: Mapping[str, Sequence[TimeSeriesMatrix]], lengths=DEFAULT_LENGTHS,
                    tr: float = 2.0, resamples: int = 50, seed: int = 0,
                    space=Space.FISHER_Z) -> ThetaModel:
    """Estimate theta(t) by resampling windows and regress it on log(t).

    ``scans`` maps subject id to at least two sessions. For every length ``t``
    and ``t / 2`` (minutes) each resample draws a contiguous window with a
    uniform start from each session and takes the global noise variance;
    the noise at a length is the mean over resamples.
    """
    space = Space.parse(space)
    lengths = sorted({float(t) for t in lengths})
    if len(lengths) < 2:
        raise InsufficientLength("need at least two scan lengths to fit a line")
    pairs = []
    for sid, sessions in scans.items():
        if len(sessions) < 2:
            raise InsufficientLength(f"subject {sid!r} has fewer than two sessions")
        pairs.append((sessions[0].values, sessions[1].values))
    if len(pairs) < 2:
        raise InsufficientLength("need at least two subjects")
    shortest = min(min(a.shape[0], b.shape[0]) for a, b in pairs)

    needed = sorted(set(lengths) | {t / 2 for t in lengths})
    n_points = {}
    for t in needed:
        n = int(round(t * 60.0 / tr))
        if n < 4 or n > shortest:
            raise InsufficientLength(
                f"{t} min is {n} timepoints at TR {tr}s; sessions allow 4..{shortest}")
        n_points[t] = n

    noise = {}
    for t in needed:
        n = n_points[t]
        draws = [_window_global_noise(pairs, n, substream(seed, "theta", n, r), space)
                 for r in range(resamples)]
        noise[t] = float(np.mean(draws))

    points = tuple((t, noise[t] / noise[t / 2]) for t in lengths)
    b0, b1, se0, se1, adj = fit_line([math.log(t) for t, _ in points], [th for _, th in points])
    return ThetaModel(b0, b1, points, se0, se1, adj, tuple(sorted(noise.items())))
