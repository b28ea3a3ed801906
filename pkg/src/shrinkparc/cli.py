"""Command-line entry point.

Exit codes: 0 success, 1 computation error, 2 usage error, 3 file error.
Every run that takes ``--out-dir`` writes ``config.resolved`` (JSON of every
resolved option) next to its results; files are only written once all
computation has succeeded.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .appendix import verify_expectation_identity
from .connectivity import Space, pearson_condensed
from .errors import ShrinkParcError
from .io import (FileFormatError, atomic_write, matrix_to_bytes, parcellation_to_csv, read_manifest,
                 read_matrix, read_parcellation, write_frame)
from .metrics import dice, dice_restricted, matrix_mse, reports_to_csv
from .pipeline import LayoutMode, build_layout, run_analysis_r1, run_analysis_r2
from .simulation import (MODES, SimulationDesign, parse_mode, resolve_threads, run_analysis_s1,
                         run_analysis_s2)
from .spectral import cluster_correlation
from .theta import DEFAULT_LENGTHS, DEFAULT_THETA, ThetaModel, fit_theta_model
from .variance import ALL_METHODS, Method, SIGNAL_SOURCES

log = logging.getLogger("shrinkparc")

EXIT_COMPUTATION = 1
EXIT_USAGE = 2
EXIT_IO = 3


class UsageError(Exception):
    pass


def _csv_list(value: str) -> list[str]:
    items = [v.strip() for v in value.split(",") if v.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    return items


class HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults, except for unset options and plain flags."""

    def _get_help_string(self, action):
        if action.default is None or action.default is False:
            return action.help
        return super()._get_help_string(action)


def _methods(value: str) -> list[str]:
    try:
        return [Method.parse(m).value for m in _csv_list(value)]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _floats(value: str) -> list[float]:
    try:
        return [float(v) for v in _csv_list(value)]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _modes(value: str) -> list[str]:
    try:
        return [parse_mode(m) for m in _csv_list(value)]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _space(value: str) -> Space:
    try:
        return Space.parse(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def _jsonable(value):
    if isinstance(value, (Space, Method, LayoutMode)):
        return value.value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    return value


def resolved_config(args: argparse.Namespace, extra: Optional[dict] = None) -> str:
    cfg = {k: _jsonable(v) for k, v in vars(args).items() if k != "handler"}
    cfg["version"] = __version__
    if extra:
        cfg.update(_jsonable(extra))
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def _write_outputs(out_dir: Path, files: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, content in files.items():
        if isinstance(content, pd.DataFrame):
            write_frame(out_dir / name, content)
        else:
            atomic_write(out_dir / name, content)


def _load_theta(path: Optional[Path]) -> ThetaModel:
    if path is None:
        return DEFAULT_THETA
    try:
        return ThetaModel.from_text(Path(path).read_text())
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc


# ---- subcommands -----------------------------------------------------------

def cmd_simulate(args) -> int:
    design = SimulationDesign(
        n_subjects=args.subjects, n_timepoints=args.timepoints, rho=args.rho,
        sigma2_x=args.sigma2x, n_iterations=args.iterations, seed=args.seed,
        flip_prob=args.flip_prob, methods=tuple(args.methods), modes=tuple(args.modes),
        space=args.space, signal_source=args.signal_source,
        theta=ThetaModel(args.theta_beta0, args.theta_beta1), tr=args.tr, n_init=args.n_init,
        parcellate=not args.no_parcellate)
    threads = resolve_threads(args.threads)
    if args.sensitivity:
        res = run_analysis_s2(design, threads=threads)
    else:
        res = run_analysis_s1(design, threads=threads)
    _write_outputs(args.out_dir, {
        "results_raw.csv": res.results, "results_summary.csv": res.summary,
        "config.resolved": resolved_config(args, {"design": design.as_dict(), "threads": threads})})
    print(res.summary.to_string(index=False))
    return 0


def _load_study(args):
    sessions = read_manifest(args.manifest)
    return sessions, build_layout(sessions, args.mode)


def _estimate_files(result, args) -> dict:
    reports = list(result.reports.values())
    files = {"results_subjects.csv": reports_to_csv(reports),
             "results_summary.csv": reports_to_csv(reports, summary=True)}
    if args.save_estimates:
        for m, stack in result.shrunk.items():
            for sid, row in zip(result.subject_ids, stack):
                files[f"shrunk_{m}_{sid}.bin"] = matrix_to_bytes(row[None, :])
    return files


def cmd_estimate(args) -> int:
    sessions, layout = _load_study(args)
    theta = _load_theta(args.theta_model)
    result = run_analysis_r1(layout, sessions, args.methods, args.space, args.global_noise_source,
                             theta, args.tr, args.signal_source)
    files = _estimate_files(result, args)
    files["config.resolved"] = resolved_config(args, {"theta": [theta.beta0, theta.beta1]})
    _write_outputs(args.out_dir, files)
    sys.stdout.write(files["results_summary.csv"])
    return 0


def cmd_parcellate(args) -> int:
    sessions, layout = _load_study(args)
    theta = _load_theta(args.theta_model)
    result = run_analysis_r2(layout, sessions, args.methods, args.k, args.seed, args.space,
                             args.global_noise_source, theta, args.tr, args.signal_source,
                             args.n_init)
    files = _estimate_files(result, args)
    if args.save_parcellations:
        for arm, parcs in result.parcellations.items():
            tag = arm.replace("/", "_")
            for sid, p in zip(result.subject_ids, parcs):
                files[f"parcellation_{tag}_{sid}.csv"] = parcellation_to_csv(p)
    files["config.resolved"] = resolved_config(args, {"theta": [theta.beta0, theta.beta1]})
    _write_outputs(args.out_dir, files)
    sys.stdout.write(files["results_summary.csv"])
    return 0


def cmd_fit_theta(args) -> int:
    sessions = read_manifest(args.manifest)
    model = fit_theta_model(sessions, args.lengths, args.tr, args.resamples, args.seed, args.space)
    noise = pd.DataFrame(model.noise_by_length, columns=["minutes", "global_noise"])
    _write_outputs(args.out_dir, {"theta_model.txt": model.to_text(),
                                  "noise_by_length.csv": noise,
                                  "config.resolved": resolved_config(args)})
    sys.stdout.write(model.to_text())
    return 0


def cmd_verify_appendix(args) -> int:
    if args.noise_variances is None:
        variances = np.arange(1, args.subjects + 1) / 10.0
    else:
        variances = np.asarray(args.noise_variances, dtype=float)
    report = verify_expectation_identity(args.subjects, args.replicates, np.sqrt(variances),
                                         args.seed)
    text = report.to_text()
    if args.out_dir is not None:
        _write_outputs(args.out_dir, {"appendix_report.txt": text,
                                      "config.resolved": resolved_config(args)})
    sys.stdout.write(text)
    return 0


def cmd_cluster(args) -> int:
    values = read_matrix(args.input)
    if args.timeseries:
        r, _ = pearson_condensed(values)
    else:
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise UsageError(f"{args.input}: expected a square correlation matrix, got "
                             f"{values.shape}; pass --timeseries for T x V input")
        r = values
    parc = cluster_correlation(r, args.k, seed=args.seed, n_init=args.n_init)
    _write_outputs(args.out_dir, {"parcellation.csv": parcellation_to_csv(parc),
                                  "config.resolved": resolved_config(args)})
    print(" ".join(str(n) for n in parc.sizes()))
    return 0


def cmd_metrics(args) -> int:
    row: dict = {}
    if args.estimate is not None or args.truth is not None:
        if args.estimate is None or args.truth is None:
            raise UsageError("--estimate and --truth go together")
        row["mse"] = matrix_mse(read_matrix(args.estimate).ravel(), read_matrix(args.truth).ravel())
    if args.parcellation is not None:
        a, b = (read_parcellation(p) for p in args.parcellation)
        row["dice"] = dice(a, b)
        if args.subset is not None:
            row["dice_subset"] = dice_restricted(a, b, [int(v) for v in args.subset])
    if not row:
        raise UsageError("give --estimate/--truth and/or --parcellation")
    frame = pd.DataFrame([row])
    if args.out_dir is not None:
        _write_outputs(args.out_dir, {"metrics.csv": frame,
                                      "config.resolved": resolved_config(args)})
    for k, v in row.items():
        print(f"{k} = {v:.17g}")
    return 0


# ---- parser ----------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--out-dir", type=Path, required=out_required, default=None,
                   help="directory for result files and config.resolved")
    p.add_argument("--seed", type=int, default=0, help="master seed for every random stream")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker cap; unset means $SHRINKPARC_THREADS or all cores")


def _add_shrinkage(p: argparse.ArgumentParser, space: Space) -> None:
    p.add_argument("--manifest", type=Path, required=True,
                   help="CSV with columns subject_id, session_id, path")
    p.add_argument("--mode", type=LayoutMode.parse, default=LayoutMode.TEST_RETEST.value,
                   help="test-retest (three parts) or single-session (pseudo halves)")
    p.add_argument("--methods", type=_methods, default=",".join(m.value for m in ALL_METHODS),
                   help="noise-variance methods among C,I,S,G")
    p.add_argument("--space", type=_space, default=Space.parse(space).value, help="correlation or fisher_z")
    p.add_argument("--global-noise-source", choices=["second-session", "theta-adjusted"],
                   default="second-session", help="global noise level in single-session mode")
    p.add_argument("--theta-model", type=Path, default=None,
                   help="fitted theta model file; unset means beta0=0.590, beta1=0.129")
    p.add_argument("--tr", type=float, default=2.0, help="repetition time in seconds")
    p.add_argument("--signal-source", choices=SIGNAL_SOURCES, default="matched",
                   help="noise field subtracted from total variance to get signal variance")
    p.add_argument("--save-estimates", action="store_true",
                   help="also write shrunk condensed matrices in binary form")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shrinkparc", formatter_class=HelpFormatter,
        description="Shrinkage of subject connectivity toward the group mean, and parcellation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    fmt = HelpFormatter

    p = sub.add_parser("simulate", formatter_class=fmt, help="run the grid simulation")
    p.add_argument("--subjects", type=int, default=20, help="subjects per iteration")
    p.add_argument("--timepoints", type=int, default=200, help="timepoints per session")
    p.add_argument("--rho", type=float, default=0.05, help="population within-cluster correlation")
    p.add_argument("--sigma2x", type=float, default=0.02, help="between-subject variance (z scale)")
    p.add_argument("--iterations", type=int, default=200, help="simulation iterations")
    p.add_argument("--methods", type=_methods, default=",".join(m.value for m in ALL_METHODS),
                   help="noise-variance methods among C,I,S,G")
    p.add_argument("--modes", type=_modes, default=",".join(MODES),
                   help="single-session and/or test-retest")
    p.add_argument("--space", type=_space, default=Space.FISHER_Z.value, help="shrinkage space")
    p.add_argument("--signal-source", choices=SIGNAL_SOURCES, default="matched",
                   help="noise field subtracted from total variance to get signal variance")
    p.add_argument("--flip-prob", type=float, default=0.5,
                   help="probability of swapping each border voxel's label")
    p.add_argument("--theta-beta0", type=float, default=0.5,
                   help="theta intercept used for pseudo-split global noise")
    p.add_argument("--theta-beta1", type=float, default=0.0, help="theta slope on log minutes")
    p.add_argument("--tr", type=float, default=2.0, help="repetition time in seconds")
    p.add_argument("--n-init", type=_positive_int, default=10, help="k-means restarts")
    p.add_argument("--no-parcellate", action="store_true", help="skip clustering and Dice")
    p.add_argument("--sensitivity", action="store_true",
                   help="run every one-at-a-time design deviation as well")
    _add_common(p)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("estimate", formatter_class=fmt,
                       help="shrink real data and score MSE against the test set")
    _add_shrinkage(p, Space.FISHER_Z)
    _add_common(p)
    p.set_defaults(handler=cmd_estimate)

    p = sub.add_parser("parcellate", formatter_class=fmt,
                       help="shrink real data and score parcellation Dice against the test set")
    _add_shrinkage(p, Space.CORRELATION)
    p.add_argument("--k", type=int, default=4, help="number of clusters")
    p.add_argument("--n-init", type=_positive_int, default=10, help="k-means restarts")
    p.add_argument("--save-parcellations", action="store_true",
                   help="also write every parcellation as CSV")
    _add_common(p)
    p.set_defaults(handler=cmd_parcellate)

    p = sub.add_parser("fit-theta", formatter_class=fmt,
                       help="fit the split-scan noise adjustment from two-session data")
    p.add_argument("--manifest", type=Path, required=True,
                   help="CSV with columns subject_id, session_id, path")
    p.add_argument("--lengths", type=_floats, default=",".join(f"{t:g}" for t in DEFAULT_LENGTHS),
                   help="scan lengths in minutes")
    p.add_argument("--tr", type=float, default=2.0, help="repetition time in seconds")
    p.add_argument("--resamples", type=_positive_int, default=50, help="windows per length")
    p.add_argument("--space", type=_space, default=Space.FISHER_Z.value, help="variance space")
    _add_common(p)
    p.set_defaults(handler=cmd_fit_theta)

    p = sub.add_parser("verify-appendix", formatter_class=fmt,
                       help="Monte-Carlo check of the noise-estimator expectation identity")
    p.add_argument("--subjects", type=int, default=20, help="number of subjects")
    p.add_argument("--replicates", type=int, default=100000, help="Monte-Carlo replicates")
    p.add_argument("--noise-variances", type=_floats, default=None,
                   help="per-subject noise variances (default: i/10 for i = 1..subjects)")
    _add_common(p, out_required=False)
    p.set_defaults(handler=cmd_verify_appendix)

    p = sub.add_parser("cluster", formatter_class=fmt,
                       help="spectral clustering of one correlation matrix")
    p.add_argument("--input", type=Path, required=True,
                   help="V x V correlation matrix (CSV or binary)")
    p.add_argument("--timeseries", action="store_true",
                   help="input is a T x V time series; correlate it first")
    p.add_argument("--k", type=int, default=4, help="number of clusters")
    p.add_argument("--n-init", type=_positive_int, default=10, help="k-means restarts")
    _add_common(p)
    p.set_defaults(handler=cmd_cluster)

    p = sub.add_parser("metrics", formatter_class=fmt, help="MSE of matrices and Dice of parcellations")
    p.add_argument("--estimate", type=Path, default=None, help="estimated matrix")
    p.add_argument("--truth", type=Path, default=None, help="reference matrix")
    p.add_argument("--parcellation", type=Path, nargs=2, default=None, metavar=("A", "B"),
                   help="two parcellation CSVs to compare")
    p.add_argument("--subset", type=_csv_list, default=None,
                   help="voxel indices for a restricted Dice")
    _add_common(p, out_required=False)
    p.set_defaults(handler=cmd_metrics)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.handler(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"shrinkparc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FileFormatError) as exc:
        print(f"shrinkparc: file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ShrinkParcError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"shrinkparc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTATION


if __name__ == "__main__":
    sys.exit(main())
