import math

import numpy as np
import pytest

from shrinkparc.connectivity import TimeSeriesMatrix
from shrinkparc.errors import InsufficientLength, NonpositiveTheta
from shrinkparc.theta import DEFAULT_THETA, ThetaModel, fit_line, fit_theta_model


def white_noise_scans(n_subjects=10, n_voxels=10, n_timepoints=840, seed=0):
    """Independent Gaussian series: the sampling variance of r scales as 1/T."""
    rng = np.random.default_rng(seed)
    return {str(i): [TimeSeriesMatrix(rng.standard_normal((n_timepoints, n_voxels)))
                     for _ in range(2)] for i in range(n_subjects)}


def test_default_coefficients():
    assert DEFAULT_THETA.beta0 == 0.590 and DEFAULT_THETA.beta1 == 0.129
    assert DEFAULT_THETA.predict(1.0) == 0.590


def test_nonpositive_theta_raises():
    with pytest.raises(NonpositiveTheta):
        ThetaModel(0.1, 0.5).predict(0.01)


def test_text_round_trip():
    m = ThetaModel(0.51, -0.002, ((2.0, 0.5), (3.0, 0.49)), 0.01, 0.004, 0.2)
    back = ThetaModel.from_text(m.to_text())
    assert back == m
    with pytest.raises(ValueError):
        ThetaModel.from_text("beta0 = 1\n")


def test_fit_line_exact():
    x = [0.0, 1.0, 2.0, 3.0]
    b0, b1, se0, se1, adj = fit_line(x, [1.0 + 2.0 * v for v in x])
    assert b0 == pytest.approx(1.0) and b1 == pytest.approx(2.0)
    assert se1 == pytest.approx(0.0, abs=1e-12)


def test_single_length_rejected():
    with pytest.raises(InsufficientLength):
        fit_theta_model(white_noise_scans(n_subjects=3, n_timepoints=100), lengths=[2.0], tr=2.0)


def test_window_longer_than_scan_rejected():
    with pytest.raises(InsufficientLength):
        fit_theta_model(white_noise_scans(n_subjects=3, n_timepoints=100), lengths=[2.0, 7.0],
                        tr=2.0)


def test_white_noise_gives_half():
    # Windows of 240..1680 points at TR 0.25 s cover 1..7 minutes; sessions are twice
    # the longest window so every length is genuinely resampled.
    scans = white_noise_scans(n_subjects=20, n_voxels=20, n_timepoints=3360)
    model = fit_theta_model(scans, tr=0.25, resamples=20, seed=0, space="correlation")
    assert abs(model.beta1) <= 2 * model.se_beta1
    assert abs(model.beta0 - 0.5) <= 2 * model.se_beta0
    for t, th in model.fitted_points:
        assert th == pytest.approx(0.5, abs=0.02)


def test_fit_is_deterministic():
    scans = white_noise_scans(n_subjects=4, n_voxels=5, n_timepoints=400)
    a = fit_theta_model(scans, lengths=[2.0, 3.0], tr=0.5, resamples=3, seed=1)
    b = fit_theta_model(scans, lengths=[2.0, 3.0], tr=0.5, resamples=3, seed=1)
    assert a.to_text() == b.to_text()
    assert math.isnan(a.se_beta1)
