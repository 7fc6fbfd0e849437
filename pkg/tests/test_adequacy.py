import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pilotwave import adequacy as ad

pos = st.floats(1e-40, 1e40, allow_nan=False, allow_infinity=False)


def test_euler_angle_lengths():
    assert ad.leading_digit(ad.euler_angle_length(1e-35, 1e30)) == (1, 15)
    assert ad.leading_digit(ad.euler_angle_length(1e-15, 1e30)) == (1, -5)
    assert ad.euler_angle_length(1.0, 1.0) == 1.0
    assert ad.euler_angle_length(2.0, 8.0) == pytest.approx(1 / 8)


def test_euler_report_candidate_margin():
    r = ad.euler_angle_bound(1e-35, 1e30, candidate=1e18)
    assert r.satisfied is True
    assert ad.euler_angle_bound(1e-35, 1e30, candidate=1e16).satisfied is False
    assert ad.euler_angle_bound(1e-35, 1e30).satisfied is None
    d = r.to_dict()
    assert d["input_units"] == {"a": "m", "rho": "m^-3"}
    assert d["threshold_unit"] == "m"


def test_dirac_sea_numbers():
    vol, rad = ad.dirac_sea_bound(1e35, 1e30)
    assert vol.threshold == pytest.approx(1e-15, rel=1e-12)
    assert rad.threshold == pytest.approx((3e-15 / (4 * math.pi)) ** (1 / 3), rel=1e-12)
    assert vol.threshold_unit == "m^3" and rad.threshold_unit == "m"
    assert rad.input_units == {"Lambda": "m^-1", "rho": "m^-3"}


def test_volume_halves_scale():
    # doubling rho multiplies the volume by 2^(-6/5), doubling Lambda by 2^(3/5)
    v = ad.dirac_sea_volume(3.0, 5.0)
    assert ad.dirac_sea_volume(6.0, 5.0) / v == pytest.approx(2**0.6)
    assert ad.dirac_sea_volume(3.0, 10.0) / v == pytest.approx(2**-1.2)


def test_density_ratio():
    assert ad.density_ratio(1e30, 1e35) - 1 < 1e-70
    assert ad.density_ratio_excess(1e30, 1e35) == pytest.approx(8 * math.pi**2 * 1e-75)
    lam = 2.0
    rho = lam**3 / (8 * math.pi**2)
    assert ad.density_ratio(rho, lam) == pytest.approx(2.0, rel=1e-14)
    assert ad.density_ratio_report(1e30, 1e35).extras["excess"] < 1e-70


@pytest.mark.parametrize("args", [(0.0, 1.0), (-1.0, 1.0), (1.0, math.inf), (1.0, math.nan)])
def test_non_positive_rejected(args):
    for f in (ad.euler_angle_length, ad.dirac_sea_volume, ad.density_ratio):
        with pytest.raises(ValueError):
            f(*args)


@settings(max_examples=60, deadline=None)
@given(a=pos, rho=pos, k=st.floats(1.01, 100))
def test_euler_monotone(a, rho, k):
    L = ad.euler_angle_length(a, rho)
    assert ad.euler_angle_length(a * k, rho) < L
    assert ad.euler_angle_length(a, rho * k) < L


@settings(max_examples=60, deadline=None)
@given(lam=pos, rho=pos, k=st.floats(1.01, 100))
def test_dirac_monotone(lam, rho, k):
    v = ad.dirac_sea_volume(lam, rho)
    assert ad.dirac_sea_volume(lam * k, rho) > v
    assert ad.dirac_sea_volume(lam, rho * k) < v


def test_leading_digit():
    assert ad.leading_digit(9.7e-6) == (1, -5)
    assert ad.leading_digit(6.2e-6) == (6, -6)
    with pytest.raises(ValueError):
        ad.leading_digit(0.0)
