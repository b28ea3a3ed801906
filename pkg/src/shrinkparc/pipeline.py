"""Real-data layouts and the estimate / parcellate analyses.

Two layouts split each subject's preprocessed time series:

* ``test-retest``: both sessions are concatenated and cut into equal thirds.
  Parts 1 and 2 estimate the variance components, part 1 is shrunk and part 3
  is the held-out test set. Every part is assembled from per-session segments,
  each demeaned, so the middle third never mixes session means.
* ``single-session``: session 1 is shrunk, its contiguous halves form a
  pseudo test-retest pair for noise variance, and session 2 is the test set.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .connectivity import Space, TimeSeriesMatrix, demean_columns, pearson_condensed
from .errors import ShrinkParcError, TooShort, UnequalSessionLengths
from .metrics import dice, matrix_mse, summarize
from .rng import cluster_seed
from .shrinkage import pair_global_level, shrink_group, split_global_level
from .spectral import Parcellation, cluster_correlation
from .theta import DEFAULT_THETA, ThetaModel
from .variance import ALL_METHODS, Method

MIN_PART_LENGTH = 10


class LayoutMode(str, enum.Enum):
    TEST_RETEST = "test-retest"
    SINGLE_SESSION = "single-session"

    @classmethod
    def parse(cls, value) -> "LayoutMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        if key in ("test-retest", "retest", "testretest3part", "3part"):
            return cls.TEST_RETEST
        if key in ("single-session", "single", "singlescanpseudo", "pseudo"):
            return cls.SINGLE_SESSION
        raise ValueError(f"unknown layout mode {value!r}")


@dataclass(frozen=True)
class Segment:
    session: int
    start: int
    stop: int

    @property
    def length(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class Part:
    segments: tuple

    @property
    def n_timepoints(self) -> int:
        return sum(s.length for s in self.segments)

    def extract(self, sessions: Sequence[TimeSeriesMatrix]) -> np.ndarray:
        pieces = []
        for seg in self.segments:
            block = sessions[seg.session].values[seg.start:seg.stop]
            pieces.append(demean_columns(block))
        return np.concatenate(pieces, axis=0)


@dataclass(frozen=True)
class StudyLayout:
    mode: LayoutMode
    parts: dict  # subject id -> {part name -> Part}

    @property
    def subject_ids(self) -> list:
        return list(self.parts)

    @property
    def raw_part(self) -> str:
        return "part1" if self.mode is LayoutMode.TEST_RETEST else "session1"

    @property
    def noise_parts(self) -> tuple:
        return ("part1", "part2") if self.mode is LayoutMode.TEST_RETEST else ("half1", "half2")

    @property
    def total_parts(self) -> tuple:
        return ("part1", "part2") if self.mode is LayoutMode.TEST_RETEST else ("session1",)

    @property
    def test_part(self) -> str:
        return "part3" if self.mode is LayoutMode.TEST_RETEST else "session2"


def _segments(start: int, stop: int, lengths: Sequence[int]) -> tuple:
    """Cut global range [start, stop) of the concatenated sessions into per-session pieces."""
    out = []
    offset = 0
    for j, n in enumerate(lengths):
        lo, hi = max(start, offset), min(stop, offset + n)
        if lo < hi:
            out.append(Segment(j, lo - offset, hi - offset))
        offset += n
    return tuple(out)


def part_boundaries(total: int, n_parts: int = 3) -> list[tuple[int, int]]:
    """Equal consecutive ranges covering ``total`` points; the remainder is dropped from the end."""
    size = total // n_parts
    return [(p * size, (p + 1) * size) for p in range(n_parts)]


def build_layout(sessions: Mapping[str, Sequence[TimeSeriesMatrix]], mode) -> StudyLayout:
    mode = LayoutMode.parse(mode)
    parts = {}
    for sid, scans in sessions.items():
        if not scans:
            raise ShrinkParcError(f"subject {sid!r} has no sessions")
        if mode is LayoutMode.TEST_RETEST:
            if len(scans) < 2:
                raise ShrinkParcError(f"subject {sid!r} needs two sessions for test-retest")
            lengths = [s.n_timepoints for s in scans[:2]]
            if lengths[0] != lengths[1]:
                raise UnequalSessionLengths(f"subject {sid!r}: sessions have {lengths} timepoints")
            subject = {f"part{p + 1}": Part(_segments(lo, hi, lengths))
                       for p, (lo, hi) in enumerate(part_boundaries(sum(lengths)))}
        else:
            n = scans[0].n_timepoints
            h = n // 2
            subject = {"session1": Part((Segment(0, 0, n),)),
                       "half1": Part((Segment(0, 0, h),)),
                       "half2": Part((Segment(0, h, 2 * h),))}
            if len(scans) > 1:
                subject["session2"] = Part((Segment(1, 0, scans[1].n_timepoints),))
        for name, part in subject.items():
            if part.n_timepoints < MIN_PART_LENGTH:
                raise TooShort(f"subject {sid!r} {name} has {part.n_timepoints} timepoints")
        parts[sid] = subject
    return StudyLayout(mode, parts)


@dataclass
class PipelineResult:
    mode: LayoutMode
    space: Space
    subject_ids: list
    reports: dict = field(default_factory=dict)        # method -> ReliabilityReport
    raw: Optional[np.ndarray] = None                   # (I, P) raw correlations
    test: Optional[np.ndarray] = None                  # (I, P) test-set correlations
    shrunk: dict = field(default_factory=dict)         # method -> (I, P)
    lam: dict = field(default_factory=dict)            # method -> (I, P)
    degree: dict = field(default_factory=dict)         # method -> (I,) mean lambda
    parcellations: dict = field(default_factory=dict)  # arm -> list[Parcellation]


def _part_stack(layout: StudyLayout, sessions, name: str) -> np.ndarray:
    rows = []
    for sid in layout.subject_ids:
        part = layout.parts[sid].get(name)
        if part is None:
            raise ShrinkParcError(f"subject {sid!r} has no {name}")
        rows.append(pearson_condensed(part.extract(sessions[sid]))[0])
    return np.asarray(rows)


def _shrink_all(layout, sessions, methods, space, global_source, theta, tr, signal_source,
                need_test=True) -> PipelineResult:
    space = Space.parse(space)
    methods = [Method.parse(m) for m in methods]
    raw = _part_stack(layout, sessions, layout.raw_part)
    first, second = (_part_stack(layout, sessions, p) for p in layout.noise_parts)
    totals = [raw if p == layout.raw_part else _part_stack(layout, sessions, p)
              for p in layout.total_parts]
    test = _part_stack(layout, sessions, layout.test_part) if need_test else None

    glob = None
    if layout.mode is LayoutMode.SINGLE_SESSION:
        if global_source == "second-session":
            second_full = test if test is not None else _part_stack(layout, sessions, "session2")
            glob = pair_global_level(raw, second_full, space)
        elif global_source == "theta-adjusted":
            n = min(p["session1"].n_timepoints for p in layout.parts.values())
            glob = split_global_level(first, second, space, theta, n * tr / 60.0)
        else:
            raise ValueError("global_source must be 'second-session' or 'theta-adjusted'")

    result = PipelineResult(layout.mode, space, layout.subject_ids, raw=raw, test=test)
    for m in methods:
        res = shrink_group(raw, first, second, totals, m, space, global_level=glob,
                           signal_source=signal_source)
        result.shrunk[m.value] = res.shrunk
        result.lam[m.value] = res.lam
        result.degree[m.value] = res.degree
    return result


def run_analysis_r1(layout: StudyLayout, sessions, methods=ALL_METHODS, shrink_space=Space.FISHER_Z,
                    global_source: str = "second-session", theta: ThetaModel = DEFAULT_THETA,
                    tr: float = 2.0, signal_source: str = "matched") -> PipelineResult:
    """MSE of raw and shrunk estimates against the raw test-set estimate."""
    result = _shrink_all(layout, sessions, methods, shrink_space, global_source, theta, tr,
                         signal_source)
    mse_raw = [matrix_mse(r, t) for r, t in zip(result.raw, result.test)]
    for m, shrunk in result.shrunk.items():
        result.reports[m] = summarize(
            result.subject_ids, mse_raw=mse_raw,
            mse_shrunk=[matrix_mse(s, t) for s, t in zip(shrunk, result.test)],
            mean_lambda=result.degree[m], label=f"{m}/{layout.mode.value}")
    return result


def run_analysis_r2(layout: StudyLayout, sessions, methods=ALL_METHODS, k: int = 4, seed: int = 0,
                    shrink_space=Space.CORRELATION, global_source: str = "second-session",
                    theta: ThetaModel = DEFAULT_THETA, tr: float = 2.0,
                    signal_source: str = "matched", n_init: int = 10) -> PipelineResult:
    """Dice of raw and shrunk parcellations against the test-set parcellation."""
    result = _shrink_all(layout, sessions, methods, shrink_space, global_source, theta, tr,
                         signal_source)

    def parcellate(stack_) -> list[Parcellation]:
        return [cluster_correlation(r, k, seed=cluster_seed(seed, i), n_init=n_init)
                for i, r in enumerate(stack_)]

    result.parcellations["test"] = parcellate(result.test)
    result.parcellations["raw"] = parcellate(result.raw)
    dice_raw = [dice(a, b) for a, b in zip(result.parcellations["raw"], result.parcellations["test"])]
    for m, shrunk in result.shrunk.items():
        arm = f"{m}/{layout.mode.value}"
        result.parcellations[arm] = parcellate(shrunk)
        result.reports[m] = summarize(
            result.subject_ids, dice_raw=dice_raw,
            dice_shrunk=[dice(a, b) for a, b in zip(result.parcellations[arm],
                                                    result.parcellations["test"])],
            mean_lambda=result.degree[m], label=arm)
    return result
