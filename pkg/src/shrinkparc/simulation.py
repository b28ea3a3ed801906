"""Synthetic test-retest study on a 10 x 10 grid with four quadrant clusters.

Each subject's parcellation is the quadrant layout with labels randomly
swapped across the horizontal midline (rows 4 and 5). Voxel time series are
Gaussian with an exchangeable within-cluster correlation that varies across
subjects on the Fisher scale.
"""
from __future__ import annotations

import dataclasses
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .connectivity import (
    ConnectivityMatrix,
    Space,
    TimeSeriesMatrix,
    fisher_z,
    inverse_fisher_z,
    demean_columns,
    pearson_condensed,
)
from .errors import FactorizationFailure, ResampleLimitExceeded
from .metrics import dice, dice_restricted, matrix_mse, percent_decrease, percent_increase
from .rng import cluster_seed, derive_seed, substream
from .shrinkage import shrink_group, split_global_level
from .spectral import Parcellation, cluster_correlation
from .theta import ThetaModel
from .variance import Method

log = logging.getLogger(__name__)

GRID_SIDE = 10
N_CLUSTERS = 4
BORDER_ROWS = (4, 5)
MAX_REJECTIONS = 10_000

SINGLE = "single-session"
RETEST = "test-retest"
MODES = (SINGLE, RETEST)

# Table-1 grid: one parameter varied at a time around the defaults.
SENSITIVITY_GRID = {
    "n_subjects": (10, 20, 30, 100),
    "n_timepoints": (100, 200, 300, 1000),
    "rho": (0.01, 0.05, 0.1),
    "sigma2_x": (0.01, 0.02, 0.03, 0.04, 0.05),
}

# Pure sampling noise scales as 1/T, so halving a scan doubles it.
SAMPLING_THETA = ThetaModel(0.5, 0.0)

RESULT_COLUMNS = ["iteration", "subject", "method", "mode", "mse", "dice_full", "dice_same",
                  "dice_diff", "mean_lambda"]


def parse_mode(value: str) -> str:
    key = str(value).strip().lower()
    if key in ("single", "single-session", "single_session", "1"):
        return SINGLE
    if key in ("retest", "test-retest", "test_retest", "2"):
        return RETEST
    raise ValueError(f"unknown data mode {value!r}")


@dataclass(frozen=True)
class SimulationDesign:
    n_subjects: int = 20
    n_timepoints: int = 200
    rho: float = 0.05
    sigma2_x: float = 0.02
    n_iterations: int = 200
    seed: int = 0
    flip_prob: float = 0.5
    methods: tuple = ("C", "I", "S", "G")
    modes: tuple = MODES
    space: Space = Space.FISHER_Z
    signal_source: str = "matched"
    theta: ThetaModel = SAMPLING_THETA
    tr: float = 2.0
    n_init: int = 10
    parcellate: bool = True
    grid_side: int = field(default=GRID_SIDE, init=False)
    k: int = field(default=N_CLUSTERS, init=False)

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if self.sigma2_x <= 0.0:
            raise ValueError("sigma2_x must be positive")
        if self.n_subjects < 2:
            raise ValueError("need at least 2 subjects")
        if self.n_timepoints < 8:
            raise ValueError("need at least 8 timepoints so each half has 4")
        if self.n_iterations < 1:
            raise ValueError("need at least one iteration")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must lie in [0, 1]")
        object.__setattr__(self, "methods", tuple(Method.parse(m).value for m in self.methods))
        object.__setattr__(self, "modes", tuple(parse_mode(m) for m in self.modes))
        object.__setattr__(self, "space", Space.parse(self.space))

    def replace(self, **changes) -> "SimulationDesign":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["space"] = self.space.value
        d["theta"] = {"beta0": self.theta.beta0, "beta1": self.theta.beta1}
        d["methods"] = list(self.methods)
        d["modes"] = list(self.modes)
        return d


def generate_group_parcellation(side: int = GRID_SIDE) -> Parcellation:
    """Quadrant labels on a row-major grid: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right."""
    half = side // 2
    rows, cols = np.divmod(np.arange(side * side), side)
    return Parcellation(2 * (rows >= half) + (cols >= half), N_CLUSTERS)


def border_voxels(side: int = GRID_SIDE) -> np.ndarray:
    rows = np.arange(side * side) // side
    return np.flatnonzero(np.isin(rows, BORDER_ROWS))


def same_region_voxels(side: int = GRID_SIDE) -> np.ndarray:
    rows = np.arange(side * side) // side
    return np.flatnonzero(~np.isin(rows, BORDER_ROWS))


def perturb_subject_parcellation(group: Parcellation, flip_prob: float,
                                 rng: np.random.Generator) -> Parcellation:
    """Swap border-row voxels to the vertically adjacent quadrant, independently."""
    border = border_voxels(int(round(np.sqrt(group.n_voxels))))
    flips = rng.random(border.size) < flip_prob
    labels = np.array(group.labels)
    # top <-> bottom quadrant on the same side: 0 <-> 2, 1 <-> 3
    labels[border[flips]] = (labels[border[flips]] + 2) % 4
    return Parcellation(labels, group.k)


def draw_subject_rho(rho: float, sigma2_x: float, rng: np.random.Generator,
                     max_rejections: int = MAX_REJECTIONS) -> float:
    """inverse_fisher(fisher(rho) + u), u ~ N(0, sigma2_x), redrawn until positive."""
    z = float(fisher_z(rho))
    sd = float(np.sqrt(sigma2_x))
    for _ in range(max_rejections + 1):
        rho_i = float(inverse_fisher_z(z + sd * rng.standard_normal()))
        if rho_i > 0.0:
            return rho_i
    raise ResampleLimitExceeded(f"no positive correlation after {max_rejections} redraws")


def build_true_connectivity(parcellation: Parcellation, rho_i: float) -> ConnectivityMatrix:
    return ConnectivityMatrix(np.where(parcellation.same_pairs(), rho_i, 0.0), Space.CORRELATION)


def sample_session(truth, n_timepoints: int, rng: np.random.Generator,
                   subject_id: str = "", session_id: str = "") -> TimeSeriesMatrix:
    """n_timepoints independent draws from N(0, C) via the Cholesky factor of C."""
    cov = truth.dense() if isinstance(truth, ConnectivityMatrix) else np.asarray(truth, float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise FactorizationFailure("covariance is not positive definite") from exc
    draws = rng.standard_normal((n_timepoints, cov.shape[0])) @ chol.T
    return TimeSeriesMatrix(draws, subject_id, session_id)


@dataclass
class SimulatedSubject:
    parcellation: Parcellation
    rho: float
    truth: ConnectivityMatrix
    sessions: tuple  # (TimeSeriesMatrix, TimeSeriesMatrix)


def iteration_seed(design: SimulationDesign, iteration: int) -> int:
    return derive_seed(design.seed, "iteration", iteration)


def simulate_subjects(design: SimulationDesign, iteration: int) -> list[SimulatedSubject]:
    rng = substream(iteration_seed(design, iteration), "data")
    group = generate_group_parcellation(design.grid_side)
    subjects = []
    for i in range(design.n_subjects):
        parc = perturb_subject_parcellation(group, design.flip_prob, rng)
        rho_i = draw_subject_rho(design.rho, design.sigma2_x, rng)
        truth = build_true_connectivity(parc, rho_i)
        sessions = tuple(sample_session(truth, design.n_timepoints, rng, str(i), str(j + 1))
                         for j in range(2))
        subjects.append(SimulatedSubject(parc, rho_i, truth, sessions))
    return subjects


def half_split(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Contiguous halves; an odd length drops the last point."""
    h = values.shape[0] // 2
    return values[:h], values[h:2 * h]


def _corr(values: np.ndarray) -> np.ndarray:
    # Every segment is demeaned before correlation, as in the real-data layouts.
    return pearson_condensed(demean_columns(values))[0]


@dataclass
class IterationOutput:
    rows: list
    estimates: dict = field(default_factory=dict)     # (method, mode) -> (I, P) shrunk
    parcellations: dict = field(default_factory=dict)  # arm -> list[Parcellation]
    raw: Optional[np.ndarray] = None


def run_iteration(design: SimulationDesign, iteration: int,
                  keep: bool = False) -> IterationOutput:
    subjects = simulate_subjects(design, iteration)
    seed_it = iteration_seed(design, iteration)
    raw1 = np.array([_corr(s.sessions[0].values) for s in subjects])
    raw2 = np.array([_corr(s.sessions[1].values) for s in subjects])
    halves = [half_split(s.sessions[0].values) for s in subjects]
    h1 = np.array([_corr(a) for a, _ in halves])
    h2 = np.array([_corr(b) for _, b in halves])
    same, diff = same_region_voxels(design.grid_side), border_voxels(design.grid_side)
    t_minutes = design.n_timepoints * design.tr / 60.0

    out = IterationOutput([], raw=raw1 if keep else None)

    def evaluate(arm: str, method: str, mode: str, est: np.ndarray, degree: Optional[np.ndarray]):
        parcs = []
        for i, s in enumerate(subjects):
            row = {"iteration": iteration, "subject": i, "method": method, "mode": mode,
                   "mse": matrix_mse(est[i], s.truth.values)}
            if design.parcellate:
                p = cluster_correlation(est[i], design.k, seed=cluster_seed(seed_it, i),
                                        n_init=design.n_init)
                parcs.append(p)
                row.update(dice_full=dice(p, s.parcellation),
                           dice_same=dice_restricted(p, s.parcellation, same),
                           dice_diff=dice_restricted(p, s.parcellation, diff))
            else:
                row.update(dice_full=np.nan, dice_same=np.nan, dice_diff=np.nan)
            row["mean_lambda"] = float(degree[i]) if degree is not None else 0.0
            out.rows.append(row)
        if keep and parcs:
            out.parcellations[arm] = parcs

    evaluate("raw", "raw", "none", raw1, None)
    for mode in design.modes:
        if mode == RETEST:
            first, second, totals, glob = raw1, raw2, [raw1, raw2], None
        else:
            first, second, totals = h1, h2, [raw1]
            glob = split_global_level(h1, h2, design.space, design.theta, t_minutes)
        for method in design.methods:
            res = shrink_group(raw1, first, second, totals, method, design.space,
                               global_level=glob, signal_source=design.signal_source)
            evaluate(f"{method}/{mode}", method, mode, res.shrunk, res.degree)
            if keep:
                out.estimates[(method, mode)] = res.shrunk
    return out


def _iteration_rows(args) -> list:
    design, iteration = args
    return run_iteration(design, iteration).rows


def resolve_threads(threads: Optional[int] = None) -> int:
    if threads is None:
        env = os.environ.get("SHRINKPARC_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def _map_iterations(design: SimulationDesign, threads: Optional[int]) -> list:
    jobs = [(design, it) for it in range(design.n_iterations)]
    n = resolve_threads(threads)
    if n == 1 or len(jobs) == 1:
        return [_iteration_rows(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        # map preserves submission order, so merging is by iteration index.
        return list(pool.map(_iteration_rows, jobs, chunksize=max(1, len(jobs) // (4 * n))))


def summarize_results(results: pd.DataFrame, by: Sequence[str] = ()) -> pd.DataFrame:
    """Medians per (method, mode) with percent changes against the raw arm."""
    keys = list(by) + ["method", "mode"]
    metrics = ["mse", "dice_full", "dice_same", "dice_diff", "mean_lambda"]
    med = results.groupby(keys, sort=False)[metrics].median().reset_index()
    med = med.rename(columns={m: f"median_{m}" for m in metrics})
    raw = med[med["method"] == "raw"].drop(columns=["method", "mode"])
    raw = raw.rename(columns={c: c + "_raw" for c in raw.columns if c.startswith("median_")})
    merged = med.merge(raw, on=list(by), how="left") if by else med.assign(
        **{c: raw[c].iloc[0] for c in raw.columns})
    merged["mse_pct_decrease"] = percent_decrease(merged["median_mse_raw"], merged["median_mse"])
    for region in ("full", "same", "diff"):
        merged[f"dice_{region}_pct_increase"] = percent_increase(
            merged[f"median_dice_{region}_raw"], merged[f"median_dice_{region}"])
    return merged.drop(columns=[c for c in merged.columns if c.endswith("_raw")])


@dataclass
class SimulationResult:
    design: SimulationDesign
    results: pd.DataFrame
    summary: pd.DataFrame

    def median(self, column: str, method: str, mode: str) -> float:
        row = self.summary[(self.summary["method"] == method) & (self.summary["mode"] == mode)]
        return float(row[f"median_{column}"].iloc[0])


def run_analysis_s1(design: SimulationDesign, threads: Optional[int] = None) -> SimulationResult:
    rows = [r for chunk in _map_iterations(design, threads) for r in chunk]
    results = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    return SimulationResult(design, results, summarize_results(results))


def s2_designs(base: SimulationDesign, grid=None) -> list[tuple[str, float, SimulationDesign]]:
    """The default design followed by every one-at-a-time deviation from it."""
    grid = SENSITIVITY_GRID if grid is None else grid
    designs = [("default", np.nan, base)]
    for param, values in grid.items():
        for value in values:
            if value == getattr(base, param):
                continue
            designs.append((param, value, base.replace(**{param: value})))
    return designs


@dataclass
class SensitivityResult:
    results: pd.DataFrame
    summary: pd.DataFrame


def run_analysis_s2(base: SimulationDesign, grid=None,
                    threads: Optional[int] = None) -> SensitivityResult:
    frames, summaries = [], []
    for param, value, design in s2_designs(base, grid):
        log.info("S2 design %s=%s", param, value)
        res = run_analysis_s1(design, threads)
        tag = {"param": param, "value": value, "n_subjects": design.n_subjects,
               "n_timepoints": design.n_timepoints, "rho": design.rho, "sigma2_x": design.sigma2_x}
        frames.append(res.results.assign(**tag))
        summaries.append(res.summary.assign(**tag))
    return SensitivityResult(pd.concat(frames, ignore_index=True),
                             pd.concat(summaries, ignore_index=True))


def sensitivity_series(summary: pd.DataFrame, param: str, column: str, method: str,
                       mode: str, base: Optional[SimulationDesign] = None) -> pd.Series:
    """Median ``column`` across the values of ``param`` (including the default)."""
    base = base or SimulationDesign()
    pick = summary[(summary["method"] == method) & (summary["mode"] == mode)]
    pick = pick[(pick["param"] == param) | (pick["param"] == "default")]
    series = pick.set_index(param)[f"median_{column}"]
    return series.sort_index()

