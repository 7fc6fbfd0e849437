"""Pilot-wave (de Broglie-Bohm) dynamics: grids, guidance, equilibrium tests and field modes."""

__version__ = "0.1.0"

from .grids import ComplexGrid, GridSpec
from .evolution import PauliCoupling, Potential, SpinorGrid, evolve_pauli, evolve_schrodinger
from .guidance import integrate_trajectory, spin_vector, velocity_scalar, velocity_spinor
from .equilibrium import EnsembleSpec, check_equivariance, continuity_residual, sample_density
from .adequacy import density_ratio, dirac_sea_bound, euler_angle_bound

__all__ = [
    "ComplexGrid",
    "GridSpec",
    "PauliCoupling",
    "Potential",
    "SpinorGrid",
    "evolve_pauli",
    "evolve_schrodinger",
    "integrate_trajectory",
    "spin_vector",
    "velocity_scalar",
    "velocity_spinor",
    "EnsembleSpec",
    "check_equivariance",
    "continuity_residual",
    "sample_density",
    "density_ratio",
    "dirac_sea_bound",
    "euler_angle_bound",
]
