import numpy as np
import pytest
from scipy import stats

from conftest import gaussian_packet
from pilotwave.equilibrium import (
    EnsembleSpec,
    LineDensity,
    check_equivariance,
    chi2_against_density,
    continuity_residual,
    ks_against_density,
    sample_density,
)
from pilotwave.evolution import Potential, record_evolution
from pilotwave.grids import ComplexGrid, GridSpec


def test_ensemble_spec_validation():
    with pytest.raises(ValueError):
        EnsembleSpec(0, 1)


def test_line_density_cdf_and_ppf_are_inverse(line_spec):
    psi = gaussian_packet(line_spec, center=0.5, width=0.7)
    line = LineDensity(line_spec, psi.density())
    u = np.linspace(0.01, 0.99, 41)
    assert np.max(np.abs(line.cdf(line.ppf(u)) - u)) < 1e-12
    # close to the continuum normal CDF of the same packet
    xs = np.linspace(-1, 2, 7)
    assert np.max(np.abs(line.cdf(xs) - stats.norm.cdf(xs, 0.5, 0.7))) < 1e-3


def test_sampling_is_seeded_and_matches_moments(line_spec):
    psi = gaussian_packet(line_spec, center=-1.0, width=0.6)
    a = sample_density(psi, EnsembleSpec(20000, 5))
    b = sample_density(psi, EnsembleSpec(20000, 5))
    assert np.array_equal(a, b)
    assert abs(a.mean() + 1.0) < 4 * 0.6 / np.sqrt(20000)
    assert abs(a.std() - 0.6) < 0.02
    st, p = ks_against_density(line_spec, psi.density(), a)
    assert p > 0.001


def test_sampling_rejects_unnormalized(line_spec):
    with pytest.raises(ValueError):
        sample_density(gaussian_packet(line_spec) * 1.1, EnsembleSpec(10, 0))


def test_two_dimensional_sampling_chi2():
    spec = GridSpec((12.0, 12.0), (64, 64))
    y, z = spec.mesh()
    psi = ComplexGrid(spec, np.exp(-(y**2) / 4 - (z - 1) ** 2 / 2)).normalized()
    pos = sample_density(psi, EnsembleSpec(20000, 3))
    st, p = chi2_against_density(spec, psi.density(), pos)
    assert p > 0.001
    shifted = pos + np.array([0.0, 0.3])
    assert chi2_against_density(spec, psi.density(), shifted)[1] < 1e-6


def test_zero_duration_equivariance_passes(line_spec):
    rep = check_equivariance(gaussian_packet(line_spec), Potential.none(), EnsembleSpec(2000, 1), [0.0])
    assert rep.ok and rep.p_values[0] > 0.01


def test_small_equivariance_and_negative_control(line_spec):
    psi = gaussian_packet(line_spec, width=0.5)
    good = check_equivariance(psi, Potential.none(), EnsembleSpec(3000, 4), [1.0, 2.0])
    bad = check_equivariance(psi, Potential.none(), EnsembleSpec(3000, 4), [1.0, 2.0], velocity_scale=1.3)
    assert good.ok and good.flagged == 0
    assert not bad.ok
    assert good.alpha_per_time == pytest.approx(0.005)


def test_continuity_residual_second_order():
    spec = GridSpec.line(20.0, 512)
    x = spec.axis(0)
    psi = ComplexGrid(spec, np.exp(-((x - 1) ** 2) / 2 + 0.5j * x)).normalized()
    V = Potential.custom(0.5 * x**2 + 0.1 * x**4 / (1 + 0.01 * x**4))
    norms = []
    for d in (0.02, 0.01, 0.005):
        times = np.linspace(0, 0.4, int(round(0.4 / d)) + 1)
        r = continuity_residual(record_evolution(psi, V, times, dt_max=d))
        norms.append(r.l2_norm[np.argmin(np.abs(r.times - 0.2))])
    orders = np.log2(np.array(norms[:-1]) / np.array(norms[1:]))
    assert np.all(np.abs(orders - 2.0) < 0.1)


def test_continuity_residual_needs_uniform_slices(line_spec):
    evo = record_evolution(gaussian_packet(line_spec), Potential.none(), [0.0, 0.1, 0.3])
    with pytest.raises(ValueError):
        continuity_residual(evo)
