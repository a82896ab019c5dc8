import math

import numpy as np
import pytest

from bellsim import chi2_log_survival, sigma_from_log_p
from bellsim.stats import _log_two_sided_normal
from oracles import (
    chi2_log_sf_quadrature,
    normal_two_sided_log_p,
    normal_two_sided_sigma,
)

# Frozen from the quadrature oracle (dps=50).
CHI2_LOG_SF_948773 = -2.9957326713157872
CHI2_LOG_SF_100 = -46.068174367275674
SIGMA_AT_P_031731 = 1.000001049431045


def test_chi2_trivial_and_errors():
    assert chi2_log_survival(0.0, 4) == 0.0
    with pytest.raises(ValueError):
        chi2_log_survival(-1.0, 4)
    with pytest.raises(ValueError):
        chi2_log_survival(1.0, 3)
    with pytest.raises(ValueError):
        chi2_log_survival(1.0, 0)
    with pytest.raises(ValueError):
        chi2_log_survival(math.nan, 4)


def test_chi2_frozen_examples():
    assert chi2_log_survival(9.48773, 4) == pytest.approx(
        CHI2_LOG_SF_948773, rel=1e-12
    )
    assert math.exp(chi2_log_survival(9.48773, 4)) == pytest.approx(0.05, abs=1e-6)
    # closed form at xi = 100: -50 + log(51)
    assert chi2_log_survival(100.0, 4) == pytest.approx(-50 + math.log(51), rel=1e-14)
    assert chi2_log_survival(100.0, 4) == pytest.approx(CHI2_LOG_SF_100, rel=1e-12)


def test_chi2_matches_quadrature_dof4():
    grid = np.concatenate(
        [np.linspace(0.01, 20.0, 12), np.geomspace(20.0, 1000.0, 8)]
    )
    for xi in grid:
        ours = chi2_log_survival(float(xi), 4)
        ref = chi2_log_sf_quadrature(float(xi), 4)
        assert ours == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("dof", [2, 4, 6, 8])
def test_chi2_matches_quadrature_other_dof(dof):
    for xi in (0.3, 2.7, 11.0, 60.0, 250.0):
        ours = chi2_log_survival(xi, dof)
        ref = chi2_log_sf_quadrature(xi, dof)
        assert ours == pytest.approx(ref, rel=1e-10)


def test_chi2_extreme_values_stay_finite():
    val = chi2_log_survival(1e6, 4)
    assert math.isfinite(val)
    assert val == pytest.approx(-5e5 + math.log(1 + 5e5), rel=1e-12)


def test_chi2_strictly_decreasing():
    grid = np.geomspace(1e-6, 1e5, 60)
    values = [chi2_log_survival(float(x), 4) for x in grid]
    assert all(b < a for a, b in zip(values, values[1:]))


def test_sigma_trivial_and_errors():
    assert sigma_from_log_p(0.0) == 0.0
    with pytest.raises(ValueError):
        sigma_from_log_p(0.5)
    with pytest.raises(ValueError):
        sigma_from_log_p(math.nan)


def test_sigma_one_sigma_point():
    s = sigma_from_log_p(math.log(0.31731))
    assert s == pytest.approx(SIGMA_AT_P_031731, rel=1e-9)
    assert s == pytest.approx(1.0, abs=1e-4)
    assert sigma_from_log_p(math.log(0.05)) == pytest.approx(
        normal_two_sided_sigma(0.05), rel=1e-9
    )


def test_sigma_forty_round_trip():
    log_p = normal_two_sided_log_p(40.0)
    assert sigma_from_log_p(log_p) == pytest.approx(40.0, abs=1e-6)


def test_sigma_round_trip_grid():
    for s in np.concatenate([np.linspace(0.05, 5.0, 12), np.linspace(8.0, 100.0, 8)]):
        log_p = normal_two_sided_log_p(float(s))
        assert sigma_from_log_p(log_p) == pytest.approx(float(s), rel=1e-6)


def test_sigma_internal_composition_identity():
    for s in (0.2, 1.0, 3.0, 10.0, 40.0, 200.0, 1200.0):
        assert sigma_from_log_p(_log_two_sided_normal(s)) == pytest.approx(
            s, rel=1e-9
        )


def test_sigma_handles_extreme_log_p():
    s = sigma_from_log_p(-1e6)
    assert math.isfinite(s)
    # invert our forward map to confirm self-consistency at the extreme
    assert _log_two_sided_normal(s) == pytest.approx(-1e6, rel=1e-9)


def test_sigma_strictly_increasing():
    grid = -np.geomspace(1e-6, 1e5, 50)
    values = [sigma_from_log_p(float(lp)) for lp in grid]
    assert all(b > a for a, b in zip(values, values[1:]))
