import numpy as np
import pytest

from conftest import gaussian_packet
from pilotwave.evolution import Potential, SpinorGrid, record_evolution
from pilotwave.grids import ComplexGrid, GridSpec
from pilotwave.guidance import (
    SliceVelocityField,
    integrate_ensemble,
    integrate_trajectory,
    spin_from_density_matrix,
    spin_vector,
    velocity_scalar,
    velocity_spinor,
)


def test_plane_wave_velocity():
    spec = GridSpec.line(2 * np.pi, 64)
    x = spec.axis(0)
    psi = ComplexGrid(spec, np.exp(3j * x)).normalized()
    v = velocity_scalar(psi, np.array([[0.123], [1.7]]))
    assert np.max(np.abs(v - 3.0)) < 1e-10


def test_real_state_has_zero_velocity(line_spec):
    psi = gaussian_packet(line_spec)
    assert np.max(np.abs(velocity_scalar(psi, np.linspace(-2, 2, 9)[:, None]))) < 1e-12


def test_gaussian_velocity_matches_analytic(line_spec):
    # a chirped Gaussian has velocity k + c x
    x = line_spec.axis(0)
    c, k = 0.3, 0.5
    psi = ComplexGrid(line_spec, np.exp(-(x**2) / 2 + 1j * (k * x + 0.5 * c * x**2))).normalized()
    pts = np.linspace(-2, 2, 11)[:, None]
    assert np.max(np.abs(velocity_scalar(psi, pts)[:, 0] - (k + c * pts[:, 0]))) < 1e-8


def test_spinor_velocity_sums_components(line_spec):
    g = gaussian_packet(line_spec, width=1.0, k=2.0)
    psi = SpinorGrid.from_spin(g, np.sqrt(0.5), 1j * np.sqrt(0.5))
    assert np.allclose(velocity_spinor(psi, np.array([[0.3]])), velocity_scalar(g, np.array([[0.3]])), atol=1e-10)


def test_spin_vector_of_x_up(line_spec):
    psi = SpinorGrid.from_spin(gaussian_packet(line_spec), np.sqrt(0.5), np.sqrt(0.5))
    s = spin_vector(psi, np.array([[0.0], [0.4]]))
    assert np.allclose(s, [[0.5, 0, 0], [0.5, 0, 0]], atol=1e-12)
    assert np.allclose(np.linalg.norm(s, axis=1), 0.5)


def test_spin_vector_indeterminate_where_density_vanishes():
    spec = GridSpec.line(40.0, 256)
    x = spec.axis(0)
    g = ComplexGrid(spec, np.where(np.abs(x) < 5, np.cos(np.pi * x / 10), 0.0)).normalized()
    psi = SpinorGrid.from_spin(g, 1.0, 0.0)
    s = spin_vector(psi, np.array([[15.0], [0.0]]))
    assert np.all(np.isnan(s[0]))
    assert np.allclose(s[1], [0, 0, 0.5])


def test_spin_from_density_matrix():
    rho = 0.5 * np.array([[1, 1], [1, 1]])
    assert np.allclose(spin_from_density_matrix(rho), [0.5, 0, 0])
    assert np.allclose(spin_from_density_matrix(np.eye(2) / 2), [0, 0, 0])


def _free_field(spec, s0, t_end, dt):
    psi = gaussian_packet(spec, width=s0)
    times = np.linspace(0, t_end, int(round(t_end / dt)) + 1)
    return SliceVelocityField(record_evolution(psi, Potential.none(), times))


def test_free_gaussian_trajectory_oracle():
    spec = GridSpec.line(40.0, 1024)
    s0 = 0.5
    t1 = 4 * s0**2
    fld = _free_field(spec, s0, t1, 0.0025)
    ts = np.linspace(0, t1, 9)
    for x0 in (1e-3, 0.3, -0.7, 1.2):
        tr = integrate_trajectory(fld, [x0], 0.0, t1, 1e-10, t_eval=ts)
        exact = x0 * np.sqrt(1 + (ts / (2 * s0**2)) ** 2)
        assert np.max(np.abs(tr.positions[:, 0] - exact) / abs(exact)) < 1e-3
        assert not tr.flagged


def test_plane_wave_trajectory():
    spec = GridSpec.line(2 * np.pi, 64)
    x = spec.axis(0)
    psi = ComplexGrid(spec, np.exp(2j * x)).normalized()
    evo = record_evolution(psi, Potential.none(), np.linspace(0, 1.0, 11))
    tr = integrate_trajectory(SliceVelocityField(evo), [0.1], 0.0, 1.0, 1e-10, wrap=spec)
    assert abs(spec.wrap(np.array([0.1 + 2.0]))[0] - tr.positions[-1, 0]) < 1e-6


def test_stationary_state_trajectory():
    spec = GridSpec.line(20.0, 256)
    x = spec.axis(0)
    psi = ComplexGrid(spec, np.exp(-(x**2) / 2)).normalized()
    evo = record_evolution(psi, Potential.harmonic(1.0), np.linspace(0, 2.0, 21), dt_max=1e-4)
    tr = integrate_trajectory(SliceVelocityField(evo), [0.8], 0.0, 2.0, 1e-10)
    assert abs(tr.positions[-1, 0] - 0.8) < 1e-8


def test_batching_and_threads_do_not_change_results(line_spec):
    fld = _free_field(line_spec, 0.5, 0.5, 0.01)
    x0 = np.random.default_rng(2).normal(scale=0.5, size=(300, 1))
    a = integrate_ensemble(fld, x0, 0.0, 0.5)
    b = integrate_ensemble(fld, x0, 0.0, 0.5, workers=4, chunk=64)
    c = integrate_ensemble(fld, x0[:7], 0.0, 0.5)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.positions[:7], c.positions)


class _Blowup:
    breakpoints = ()

    def evaluate(self, t, x):
        v = np.where(x[:, :1] > 0, np.nan, 1.0)
        return v, np.ones(len(x))


def test_bad_field_flags_trajectory():
    ens = integrate_ensemble(_Blowup(), np.array([[-5.0], [1.0]]), 0.0, 1.0)
    assert ens.flagged.tolist() == [False, True]
    assert np.isnan(ens.final()[1, 0])
    assert abs(ens.final()[0, 0] + 4.0) < 1e-12


def test_integration_interval_validated(line_spec):
    fld = _free_field(line_spec, 0.5, 0.1, 0.01)
    with pytest.raises(ValueError):
        integrate_ensemble(fld, np.zeros((1, 1)), 1.0, 0.5)
    with pytest.raises(ValueError):
        integrate_ensemble(fld, np.zeros((1, 1)), 0.0, 0.1, t_eval=[0.05, 0.01])
