"""Split-step spectral propagation of scalar and two-component (Pauli) states.

Hamiltonian, in units hbar = m = 1::

    H = -1/2 laplacian + V(x) - mu * sigma_z * B_z(z) * window

with ``B_z(z) = b0 - gradient * z``. The coupling is diagonal in the spin
index, so each component sees its own scalar potential.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .grids import ComplexGrid, GridError, GridSpec

log = logging.getLogger(__name__)


class NumericalQualityError(RuntimeError):
    """A run violated a numerical-hygiene bound (norm drift, resolution)."""


class NormDriftError(NumericalQualityError):
    pass


class NormalizationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Potential:
    kind: str = "none"
    omega: float = 1.0
    center: float = 0.0
    height: float = 0.0
    width: float = 1.0
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("none", "harmonic", "barrier", "custom"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "custom":
            if self.values is None:
                raise ValueError("custom potential needs sampled values")
            vals = np.asarray(self.values)
            if np.iscomplexobj(vals) or not np.all(np.isfinite(vals)):
                raise ValueError("potential values must be real and finite")

    @classmethod
    def none(cls) -> "Potential":
        return cls()

    @classmethod
    def harmonic(cls, omega: float, center: float = 0.0) -> "Potential":
        return cls("harmonic", omega=omega, center=center)

    @classmethod
    def barrier(cls, height: float, width: float, center: float = 0.0) -> "Potential":
        return cls("barrier", height=height, width=width, center=center)

    @classmethod
    def custom(cls, values) -> "Potential":
        return cls("custom", values=np.asarray(values, dtype=float))

    @property
    def time_independent(self) -> bool:
        return True

    def sample(self, spec: GridSpec) -> np.ndarray:
        if self.kind == "none":
            return np.zeros(spec.shape)
        if self.kind == "custom":
            vals = np.asarray(self.values, dtype=float)
            if vals.shape != spec.shape:
                raise GridError(f"custom potential shape {vals.shape} != grid {spec.shape}")
            return vals
        mesh = spec.mesh()
        if self.kind == "harmonic":
            r2 = sum((x - self.center) ** 2 for x in mesh)
            return 0.5 * self.omega**2 * r2
        # barrier across the first axis
        return np.where(np.abs(mesh[0] - self.center) < self.width / 2, self.height, 0.0)


@dataclass(frozen=True)
class PauliCoupling:
    """Linear ``B_z`` profile switched on during ``[t_on, t_off]``.

    ``y_window`` (2D only) restricts the magnet to ``y_lo < y < y_hi`` with
    tanh edges of width ``edge``.
    """

    mu: float
    gradient: float
    b0: float = 0.0
    t_on: float = 0.0
    t_off: float = float("inf")
    y_window: tuple[float, float] | None = None
    edge: float = 0.5

    def __post_init__(self):
        if not self.t_on <= self.t_off:
            raise ValueError(f"need t_on <= t_off, got [{self.t_on}, {self.t_off}]")
        if not all(np.isfinite([self.mu, self.gradient, self.b0])):
            raise ValueError("coupling coefficients must be finite")

    def active(self, t: float) -> bool:
        return self.mu != 0 and self.t_on <= t <= self.t_off

    def energy_shift(self, spec: GridSpec) -> np.ndarray:
        """``-mu B_z(z) window`` sampled on the grid; z is the last axis."""
        mesh = spec.mesh()
        z = mesh[-1]
        shift = -self.mu * (self.b0 - self.gradient * z)
        if self.y_window is not None:
            if spec.dim != 2:
                raise GridError("a y-window needs a 2D (y, z) grid")
            y = mesh[0]
            lo, hi = self.y_window
            shift = shift * 0.5 * (np.tanh((y - lo) / self.edge) - np.tanh((y - hi) / self.edge))
        return shift


@dataclass(frozen=True, eq=False)
class SpinorGrid:
    up: ComplexGrid
    down: ComplexGrid

    def __post_init__(self):
        if self.up.spec != self.down.spec:
            raise GridError("spinor components must share one grid")

    @property
    def spec(self) -> GridSpec:
        return self.up.spec

    @classmethod
    def from_spin(cls, packet: ComplexGrid, alpha: complex, beta: complex) -> "SpinorGrid":
        return cls(packet * alpha, packet * beta)

    @property
    def values(self) -> np.ndarray:
        return np.stack([self.up.values, self.down.values])

    def density(self) -> np.ndarray:
        return self.up.density() + self.down.density()

    def norm(self) -> float:
        return self.up.norm() + self.down.norm()

    def weights(self) -> tuple[float, float]:
        return self.up.norm(), self.down.norm()


def _as_stack(psi) -> tuple[GridSpec, np.ndarray]:
    if isinstance(psi, SpinorGrid):
        return psi.spec, psi.values
    return psi.spec, psi.values[None]


def _from_stack(spec: GridSpec, values: np.ndarray, spinor: bool):
    if spinor:
        return SpinorGrid(ComplexGrid(spec, values[0]), ComplexGrid(spec, values[1]))
    return ComplexGrid(spec, values[0])


def _stack_norm(spec: GridSpec, values: np.ndarray) -> float:
    return float(np.sum(np.abs(values) ** 2) * spec.cell_volume)


class SplitStepper:
    """Strang splitting: half potential kick, exact kinetic drift, half kick.

    ``potentials`` has shape ``(C, *grid)``, one real potential per component.
    """

    def __init__(self, spec: GridSpec, potentials: np.ndarray):
        self.spec = spec
        self.potentials = np.asarray(potentials, dtype=float)
        self._k2 = sum(k**2 for k in spec.k_mesh())
        self._axes = tuple(range(1, spec.dim + 1))
        self._cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def _factors(self, dt: float):
        if dt not in self._cache:
            if len(self._cache) > 8:
                self._cache.clear()
            self._cache[dt] = (
                np.exp(-0.5j * dt * self.potentials),
                np.exp(-0.5j * dt * self._k2),
            )
        return self._cache[dt]

    def step(self, values: np.ndarray, dt: float) -> np.ndarray:
        half_v, kin = self._factors(dt)
        out = values * half_v
        out = np.fft.ifftn(np.fft.fftn(out, axes=self._axes) * kin, axes=self._axes)
        return out * half_v


def _check_normalized(spec, values, tol=1e-8):
    n = _stack_norm(spec, values)
    if abs(n - 1.0) > tol:
        raise NormalizationError(f"state must be normalized, got norm {n:.12g}")


def _check_dt(dt, steps):
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if int(steps) != steps or steps < 0:
        raise ValueError(f"steps must be a non-negative integer, got {steps}")


def _run(spec, values, potential_fn, dt, steps, t0, norm_tol, norm0=None):
    if norm0 is None:
        norm0 = _stack_norm(spec, values)
    stepper = None
    current_key = None
    t = t0
    for _ in range(int(steps)):
        key, pots = potential_fn(t + 0.5 * dt)
        if key != current_key:
            stepper = SplitStepper(spec, pots)
            current_key = key
        values = stepper.step(values, dt)
        t += dt
        drift = abs(_stack_norm(spec, values) - norm0)
        if drift > norm_tol:
            raise NormDriftError(f"norm drifted by {drift:.3e} at t={t:.6g} (under-resolved run?)")
    return values


def _potential_fn(spec: GridSpec, V: Potential, coupling: PauliCoupling | None, ncomp: int):
    base = V.sample(spec)
    if coupling is None or coupling.mu == 0:
        pots = np.broadcast_to(base, (ncomp,) + spec.shape)
        return lambda t: ("off", pots)
    shift = coupling.energy_shift(spec)
    on = np.stack([base + shift, base - shift])
    off = np.stack([base, base])
    return lambda t: ("on", on) if coupling.active(t) else ("off", off)


def evolve_schrodinger(
    psi: ComplexGrid, V: Potential, dt: float, steps: int, *, norm_tol: float = 1e-8
) -> ComplexGrid:
    """Advance ``psi`` by ``steps`` Strang steps of size ``dt``."""
    _check_dt(dt, steps)
    spec, values = _as_stack(psi)
    _check_normalized(spec, values)
    values = _run(spec, values, _potential_fn(spec, V, None, 1), dt, steps, 0.0, norm_tol)
    return _from_stack(spec, values, False)


def evolve_pauli(
    psi: SpinorGrid,
    V: Potential,
    coupling: PauliCoupling | None,
    dt: float,
    steps: int,
    *,
    t0: float = 0.0,
    norm_tol: float = 1e-8,
) -> SpinorGrid:
    _check_dt(dt, steps)
    spec, values = _as_stack(psi)
    _check_normalized(spec, values)
    values = _run(spec, values, _potential_fn(spec, V, coupling, 2), dt, steps, t0, norm_tol)
    return _from_stack(spec, values, True)


def energy(psi: ComplexGrid, V: Potential) -> float:
    """Expectation of ``-1/2 laplacian + V``."""
    spec = psi.spec
    k2 = sum(k**2 for k in spec.k_mesh())
    ft = np.fft.fftn(psi.values, norm="ortho")
    kinetic = 0.5 * np.sum(k2 * np.abs(ft) ** 2) * spec.cell_volume
    potential = np.sum(V.sample(spec) * psi.density()) * spec.cell_volume
    return float((kinetic + potential) / psi.norm())


def default_dt(psi, V: Potential, coupling: PauliCoupling | None = None, max_phase: float = 0.1) -> float:
    """Step with kinetic plus potential phase advance below ``max_phase`` rad.

    Only Fourier modes and nodes carrying more than 1e-12 of the peak weight
    count, since the outer spectrum of a resolved state is numerically empty.
    """
    spec, values = _as_stack(psi)
    k2 = sum(k**2 for k in spec.k_mesh())
    power = np.sum(np.abs(np.fft.fftn(values, axes=tuple(range(1, spec.dim + 1)))) ** 2, axis=0)
    e_kin = 0.5 * np.max(k2[power > 1e-12 * power.max()])
    dens = np.sum(np.abs(values) ** 2, axis=0)
    support = dens > 1e-12 * dens.max()
    pot = np.abs(V.sample(spec))
    if coupling is not None and coupling.mu != 0:
        pot = pot + np.abs(coupling.energy_shift(spec))
    e_pot = np.max(pot[support])
    return max_phase / max(e_kin + e_pot, 1e-12)


@dataclass(eq=False)
class Evolution:
    """Stored time slices of one evolution pass; immutable once built."""

    spec: GridSpec
    times: np.ndarray
    states: np.ndarray  # (S, C, *grid)
    spinor: bool
    max_norm_drift: float = 0.0
    edge_mass: float = 0.0
    edge_tol: float = 1e-6
    max_slice_phase_step: float = 0.0
    steps_taken: int = 0
    notes: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.edge_mass < self.edge_tol

    def __len__(self):
        return len(self.times)

    def state(self, i: int):
        return _from_stack(self.spec, self.states[i], self.spinor)

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol * max(1.0, abs(t)):
            raise KeyError(f"no stored slice at t={t}")
        return i

    def densities(self) -> np.ndarray:
        return np.sum(np.abs(self.states) ** 2, axis=1)


def edge_mass(spec: GridSpec, values: np.ndarray, guard_fraction: float = 0.05) -> float:
    """Probability in the band of width ``guard_fraction * extent`` at each edge."""
    dens = np.sum(np.abs(values) ** 2, axis=0)
    mask = np.zeros(spec.shape, dtype=bool)
    for a, n in enumerate(spec.points):
        band = max(1, int(round(guard_fraction * n)))
        sl = [slice(None)] * spec.dim
        sl[a] = np.r_[0:band, n - band : n]
        mask[tuple(sl)] = True
    return float(np.sum(dens[mask]) * spec.cell_volume)


def _relative_phase_step(a: np.ndarray, b: np.ndarray) -> float:
    """Largest local phase change between two slices, global phase removed."""
    dens = np.abs(a) ** 2
    keep = dens > 1e-6 * dens.max()
    if not np.any(keep):
        return 0.0
    overlap = np.sum(np.conj(a) * b)
    rot = overlap / abs(overlap) if abs(overlap) > 0 else 1.0
    return float(np.max(np.abs(np.angle(b[keep] * np.conj(a[keep]) / rot))))


def record_evolution(
    psi,
    V: Potential,
    times,
    *,
    coupling: PauliCoupling | None = None,
    dt_max: float | None = None,
    norm_tol: float = 1e-8,
    guard_fraction: float = 0.05,
    edge_tol: float = 1e-6,
) -> Evolution:
    """Evolve ``psi`` (given at ``times[0]``) and store it at every entry of ``times``.

    Each interval is split into equal steps no longer than ``dt_max``; the
    coupling window edges are inserted as extra breakpoints so the switch
    lands on a step boundary.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) == 0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be a strictly increasing 1D sequence")
    spinor = isinstance(psi, SpinorGrid)
    spec, values = _as_stack(psi)
    _check_normalized(spec, values)
    if dt_max is None:
        dt_max = default_dt(psi, V, coupling)
    ncomp = values.shape[0]
    pot_fn = _potential_fn(spec, V, coupling, ncomp)

    breaks = set(times.tolist())
    if coupling is not None:
        for tb in (coupling.t_on, coupling.t_off):
            if times[0] < tb < times[-1]:
                breaks.add(float(tb))
    breaks = np.array(sorted(breaks))
    store = set(range(len(times)))

    states = np.empty((len(times), ncomp) + spec.shape, dtype=complex)
    states[0] = values
    norm0 = _stack_norm(spec, values)
    worst_drift = 0.0
    worst_edge = edge_mass(spec, values, guard_fraction)
    worst_phase = 0.0
    steps_taken = 0
    k = 1
    for t_a, t_b in zip(breaks[:-1], breaks[1:]):
        n = max(1, int(np.ceil((t_b - t_a) / dt_max - 1e-9)))
        dt = (t_b - t_a) / n
        values = _run(spec, values, pot_fn, dt, n, t_a, norm_tol, norm0)
        steps_taken += n
        worst_drift = max(worst_drift, abs(_stack_norm(spec, values) - norm0))
        if k in store and abs(times[k] - t_b) <= 1e-12 * max(1.0, abs(t_b)):
            states[k] = values
            worst_edge = max(worst_edge, edge_mass(spec, values, guard_fraction))
            worst_phase = max(
                worst_phase,
                max(_relative_phase_step(states[k - 1][c], values[c]) for c in range(ncomp)),
            )
            k += 1
    evo = Evolution(
        spec,
        times.copy(),
        states,
        spinor,
        max_norm_drift=worst_drift,
        edge_mass=worst_edge,
        edge_tol=edge_tol,
        max_slice_phase_step=worst_phase,
        steps_taken=steps_taken,
    )
    if not evo.valid:
        evo.notes.append(f"edge mass {worst_edge:.3e} exceeds {edge_tol:.1e}; domain too small")
        log.warning(evo.notes[-1])
    return evo
