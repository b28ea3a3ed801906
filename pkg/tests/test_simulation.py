import math

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from shrinkparc.connectivity import fisher_z
from shrinkparc.errors import FactorizationFailure, ResampleLimitExceeded
from shrinkparc.rng import substream
from shrinkparc.simulation import (
    RETEST,
    SINGLE,
    SimulationDesign,
    border_voxels,
    build_true_connectivity,
    draw_subject_rho,
    generate_group_parcellation,
    half_split,
    parse_mode,
    perturb_subject_parcellation,
    run_analysis_s1,
    run_analysis_s2,
    run_iteration,
    s2_designs,
    sample_session,
    sensitivity_series,
    simulate_subjects,
)

SMALL = dict(n_subjects=5, n_timepoints=60, n_iterations=2, seed=4)


def test_group_parcellation():
    g = generate_group_parcellation()
    assert g.sizes().tolist() == [25, 25, 25, 25]
    grid = g.labels.reshape(10, 10)
    assert grid[0, 0] == 0 and grid[0, 9] == 1 and grid[9, 0] == 2 and grid[9, 9] == 3
    assert np.array_equal(generate_group_parcellation().labels, g.labels)


def test_perturb_limits():
    g = generate_group_parcellation()
    rng = np.random.default_rng(0)
    assert np.array_equal(perturb_subject_parcellation(g, 0.0, rng).labels, g.labels)
    full = perturb_subject_parcellation(g, 1.0, rng).labels.reshape(10, 10)
    grid = g.labels.reshape(10, 10)
    assert np.array_equal(full[4], grid[5]) and np.array_equal(full[5], grid[4])
    keep = [0, 1, 2, 3, 6, 7, 8, 9]
    assert np.array_equal(full[keep], grid[keep])


def test_non_border_voxels_never_change():
    g = generate_group_parcellation()
    rng = np.random.default_rng(1)
    interior = np.setdiff1d(np.arange(100), border_voxels())
    changed = np.zeros(100, dtype=bool)
    for _ in range(1000):
        labels = perturb_subject_parcellation(g, 0.5, rng).labels
        assert np.array_equal(labels[interior], g.labels[interior])
        changed |= labels != g.labels
    assert changed[border_voxels()].all()


def test_rho_degenerate_and_positive():
    rng = np.random.default_rng(2)
    assert draw_subject_rho(0.05, 1e-14, rng) == pytest.approx(0.05, abs=1e-6)
    draws = [draw_subject_rho(0.05, 0.02, rng) for _ in range(2000)]
    assert min(draws) > 0.0


def test_rho_matches_truncated_normal_mean():
    # Redrawing until rho_i > 0 truncates z(rho_i) ~ N(z(rho), sigma2) at zero.
    rho, sigma2, n = 0.05, 0.02, 100_000
    rng = np.random.default_rng(3)
    z = fisher_z(np.array([draw_subject_rho(rho, sigma2, rng) for _ in range(n)]))
    loc, scale = float(np.arctanh(rho)), math.sqrt(sigma2)
    target = stats.truncnorm.mean((0.0 - loc) / scale, np.inf, loc=loc, scale=scale)
    se = z.std(ddof=1) / math.sqrt(n)
    assert abs(z.mean() - target) <= 3 * se
    # The truncation is far from negligible here: the mean moves well above z(rho).
    assert target - loc > 0.05


def test_rho_resample_limit():
    with pytest.raises(ResampleLimitExceeded):
        draw_subject_rho(0.001, 1.0, _NegativeRng(), max_rejections=5)


class _NegativeRng:
    def standard_normal(self):
        return -1.0


def test_true_connectivity():
    g = generate_group_parcellation()
    assert np.array_equal(build_true_connectivity(g, 0.0).dense(), np.eye(100))
    c = build_true_connectivity(g, 0.05).dense()
    assert np.linalg.eigvalsh(c).min() == pytest.approx(0.95)
    assert c[0, 99] == 0.0
    assert c[0, 1] == 0.05


def test_sample_session_identity_is_uncorrelated():
    ts = sample_session(np.eye(3), 100_000, np.random.default_rng(4))
    r = np.corrcoef(ts.values.T)[np.triu_indices(3, 1)]
    assert np.all(np.abs(r) <= 3 / math.sqrt(100_000))


def test_sample_session_is_deterministic():
    g = generate_group_parcellation()
    truth = build_true_connectivity(g, 0.1)
    a = sample_session(truth, 50, substream(9, "x"))
    b = sample_session(truth, 50, substream(9, "x"))
    assert np.array_equal(a.values, b.values)


def test_sample_session_rejects_indefinite():
    with pytest.raises(FactorizationFailure):
        sample_session(np.array([[1.0, 2.0], [2.0, 1.0]]), 10, np.random.default_rng(0))


def test_half_split_drops_odd_point():
    x = np.arange(14.0).reshape(7, 2)
    a, b = half_split(x)
    assert a.shape == (3, 2) and b.shape == (3, 2)
    assert np.array_equal(b, x[3:6])


def test_parse_mode():
    assert parse_mode("single") == SINGLE
    assert parse_mode("test_retest") == RETEST
    with pytest.raises(ValueError):
        parse_mode("triple")


def test_design_validation():
    with pytest.raises(ValueError):
        SimulationDesign(rho=1.5)
    with pytest.raises(ValueError):
        SimulationDesign(methods=("X",))
    d = SimulationDesign(methods=("common", "g"))
    assert d.methods == ("C", "G")


def test_iteration_rows_and_arms():
    d = SimulationDesign(**SMALL)
    out = run_iteration(d, 0, keep=True)
    assert len(out.rows) == d.n_subjects * (1 + len(d.methods) * len(d.modes))
    assert set(out.parcellations) == {"raw"} | {f"{m}/{mode}" for m in d.methods for mode in d.modes}
    raw_rows = [r for r in out.rows if r["method"] == "raw"]
    assert all(r["mean_lambda"] == 0.0 for r in raw_rows)
    assert all(0.0 <= r["mean_lambda"] <= 1.0 for r in out.rows)


def test_subjects_depend_only_on_seed_and_iteration():
    d = SimulationDesign(**SMALL)
    a = simulate_subjects(d, 1)
    b = simulate_subjects(d.replace(methods=("C",)), 1)
    assert all(np.array_equal(x.sessions[0].values, y.sessions[0].values) for x, y in zip(a, b))


def test_s1_summary_columns():
    res = run_analysis_s1(SimulationDesign(**SMALL), threads=1)
    assert len(res.results) == 2 * 5 * 9
    s = res.summary
    raw = s[s["method"] == "raw"].iloc[0]
    assert raw["mse_pct_decrease"] == 0.0
    assert {"median_mse", "median_dice_full", "dice_diff_pct_increase"} <= set(s.columns)
    assert res.median("mse", "raw", "none") == pytest.approx(res.results.query("method == 'raw'")["mse"].median())


def test_s2_grid_of_size_one_matches_s1():
    d = SimulationDesign(**SMALL)
    s1 = run_analysis_s1(d, threads=1)
    s2 = run_analysis_s2(d, grid={"n_timepoints": [d.n_timepoints]}, threads=1)
    pd.testing.assert_frame_equal(s2.results[s1.results.columns], s1.results)


def test_s2_designs_and_series():
    d = SimulationDesign(**SMALL, methods=("C",), modes=("test-retest",), parcellate=False)
    grid = {"n_timepoints": [40, 60, 80]}
    assert [v for _, v, _ in s2_designs(d, grid)][1:] == [40, 80]
    s2 = run_analysis_s2(d, grid=grid, threads=1)
    series = sensitivity_series(s2.summary, "n_timepoints", "mean_lambda", "C", RETEST)
    assert series.index.tolist() == [40, 60, 80]
