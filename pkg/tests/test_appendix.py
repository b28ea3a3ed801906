import numpy as np
import pytest

from shrinkparc.appendix import verify_expectation_identity
from shrinkparc.errors import TooFewSubjects


def test_homogeneous_target_is_sigma_squared():
    r = verify_expectation_identity(5, 2000, np.full(5, 0.3), seed=1)
    assert r.analytic_value == pytest.approx(0.09)


def test_heterogeneous_identity():
    variances = np.arange(1, 21) / 10.0
    r = verify_expectation_identity(20, 100_000, np.sqrt(variances), seed=0)
    assert r.analytic_value == pytest.approx(1.05)
    assert abs(r.mean_common - 1.05) <= 3 * r.se_common
    assert abs(r.mean_of_individuals - 1.05) <= 3 * r.se_individuals
    assert abs(r.z_difference) <= 3
    assert r.passed


def test_report_text_and_determinism():
    a = verify_expectation_identity(3, 1000, [0.1, 0.2, 0.3], seed=2)
    b = verify_expectation_identity(3, 1000, [0.1, 0.2, 0.3], seed=2)
    assert a == b
    text = a.to_text()
    assert "mean_common = " in text and "z_individuals = " in text


def test_input_validation():
    with pytest.raises(TooFewSubjects):
        verify_expectation_identity(1, 1000, [1.0])
    with pytest.raises(ValueError):
        verify_expectation_identity(3, 999, [1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        verify_expectation_identity(3, 1000, [1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        verify_expectation_identity(3, 1000, [1.0, 1.0])
