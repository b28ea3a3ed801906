"""Property suites; runnable on their own with ``pytest tests/test_properties.py``."""
import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from shrinkparc.connectivity import fisher_z, inverse_fisher_z, shrink
from shrinkparc.metrics import dice, dice_restricted
from shrinkparc.simulation import (SimulationDesign, build_true_connectivity,
                                   generate_group_parcellation, perturb_subject_parcellation,
                                   run_analysis_s1)
from shrinkparc.spectral import cluster_correlation
from shrinkparc.variance import scaling_factor, signal_variance

finite = dict(allow_nan=False, allow_infinity=False)
corr = st.floats(-0.999999, 0.999999, **finite)


@given(arrays(float, st.integers(1, 40), elements=corr))
def test_fisher_round_trip(r):
    assert np.max(np.abs(inverse_fisher_z(fisher_z(r)) - r)) <= 1e-12


@given(arrays(float, 12, elements=corr), arrays(float, 12, elements=corr),
       arrays(float, 12, elements=st.floats(0.0, 1.0, **finite)))
def test_shrinkage_is_convex(raw, mean, lam):
    out = shrink(raw, mean, lam)
    assert np.all(out >= np.minimum(raw, mean)) and np.all(out <= np.maximum(raw, mean))


@given(arrays(float, 12, elements=corr), arrays(float, 12, elements=corr),
       st.floats(0.0, 1.0, **finite), st.floats(0.0, 1.0, **finite))
def test_larger_lambda_moves_closer_to_mean(raw, mean, a, b):
    lo, hi = sorted((a, b))
    near = np.abs(shrink(raw, mean, hi) - mean)
    far = np.abs(shrink(raw, mean, lo) - mean)
    assert np.all(near <= far + 1e-15)


@pytest.mark.parametrize("v", range(1, 7))
def test_dice_all_partition_pairs(v):
    parts = [np.array(p) for p in oracles.set_partitions(v)]
    for a in parts:
        for b in parts:
            assert dice(a, b) == pytest.approx(oracles.dice(a.tolist(), b.tolist()), abs=1e-15)


@pytest.mark.parametrize("v", [7, 8])
def test_dice_every_partition_against_references(v):
    parts = [np.array(p) for p in oracles.set_partitions(v)]
    refs = [parts[0], parts[-1], parts[len(parts) // 3], parts[len(parts) // 2], parts[-7]]
    for a in parts:
        for b in refs:
            assert dice(a, b) == pytest.approx(oracles.dice(a.tolist(), b.tolist()), abs=1e-15)


@given(st.lists(st.integers(0, 3), min_size=8, max_size=8),
       st.lists(st.integers(0, 3), min_size=8, max_size=8),
       st.sets(st.integers(0, 7), min_size=1))
def test_dice_restricted_matches_pairs(a, b, subset):
    got = dice_restricted(np.array(a), np.array(b), sorted(subset))
    assert got == pytest.approx(oracles.dice(a, b, subset), abs=1e-15)


@pytest.mark.parametrize("rho", [0.02, 0.05, 0.3, 0.9])
@pytest.mark.parametrize("seed", [0, 1])
def test_noiseless_blocks_recovered(rho, seed):
    rng = np.random.default_rng(seed)
    truth_parc = perturb_subject_parcellation(generate_group_parcellation(), 0.5, rng)
    truth = build_true_connectivity(truth_parc, rho)
    assert dice(cluster_correlation(truth, 4, seed=seed), truth_parc) == 1.0


@given(arrays(float, st.tuples(st.integers(2, 8), st.integers(1, 10)),
              elements=st.floats(-5, 5, **finite)))
def test_gamma_mean_is_one(d):
    if np.mean(np.mean(d * d, axis=1)) <= 1e-100:
        return
    assert np.mean(scaling_factor(d).gamma) == pytest.approx(1.0, abs=1e-12)


@given(arrays(float, 15, elements=st.floats(0, 1, **finite)),
       arrays(float, 15, elements=st.floats(0, 1, **finite)))
def test_signal_variance_nonnegative(total, noise):
    s = signal_variance(total, noise)
    assert np.all(s.values >= 0.0)
    assert s.clamped_count == int(np.sum(total < noise))


def test_results_independent_of_thread_count():
    design = SimulationDesign(n_subjects=6, n_timepoints=80, n_iterations=4, seed=11)
    frames = [run_analysis_s1(design, threads=t).results for t in (1, 2, 3)]
    for f in frames[1:]:
        pd.testing.assert_frame_equal(frames[0], f, check_exact=True)
