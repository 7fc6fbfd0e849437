"""End-to-end pipelines: Stern-Gerlach trajectories and the field branching demo."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import fieldmodes as fm
from .equilibrium import EnsembleSpec, LineDensity, _time_grid, sample_density
from .evolution import Evolution, PauliCoupling, Potential, SpinorGrid, record_evolution
from .grids import ComplexGrid, GridSpec
from .guidance import SliceVelocityField, integrate_ensemble, spin_vector

log = logging.getLogger(__name__)

UP, DOWN, INDETERMINATE = 1, -1, 0
SPIN_STATES = {
    "z-up": (1.0, 0.0),
    "z-down": (0.0, 1.0),
    "x-up": (np.sqrt(0.5), np.sqrt(0.5)),
    "x-down": (np.sqrt(0.5), -np.sqrt(0.5)),
}


@dataclass
class ScenarioConfig:
    """Stern-Gerlach setup. Positions are ``(z,)`` in 1D and ``(y, z)`` in 2D."""

    spin: str = "x-up"
    alpha: complex | None = None
    beta: complex | None = None
    extent: tuple = (80.0,)
    points: tuple = (2048,)
    center: tuple = (0.0,)
    width: float = 1.0
    momentum: tuple = (0.0,)
    mu: float = -1.0
    gradient: float = 16.0
    b0: float = 0.0
    t_on: float = 0.0
    t_off: float = 0.5
    y_window: tuple | None = None
    count: int = 10_000
    seed: int = 0
    separation: float = 6.0
    stability: tuple = (4.0, 10.0)
    max_time: float = 10.0
    slice_dt: float = 0.01
    tolerance: float = 1e-8
    trace_count: int = 20
    trace_dt: float = 0.05
    workers: int = 1

    def spinor(self) -> tuple[complex, complex]:
        if self.alpha is not None or self.beta is not None:
            a = complex(self.alpha or 0)
            b = complex(self.beta or 0)
        elif self.spin in SPIN_STATES:
            a, b = SPIN_STATES[self.spin]
        else:
            raise ValueError(f"unknown spin state {self.spin!r}")
        if abs(abs(a) ** 2 + abs(b) ** 2 - 1) > 1e-12:
            raise ValueError(f"spinor ({a}, {b}) is not normalized")
        return complex(a), complex(b)

    def grid(self) -> GridSpec:
        return GridSpec(tuple(self.extent), tuple(self.points))

    def validate(self):
        spec = self.grid()
        if not (len(self.center) == len(self.momentum) == spec.dim):
            raise ValueError("center and momentum need one entry per grid axis")
        if self.width <= 0:
            raise ValueError("packet width must be positive")
        lo, hi = self.stability
        if not 0 < lo <= self.separation <= hi:
            raise ValueError("need 0 < stability low <= separation <= stability high")
        exposure = min(self.t_off, self.max_time) - self.t_on
        if self.y_window is not None and self.momentum[0] != 0:
            # the tanh window integrates to its nominal length
            exposure = min(exposure, (self.y_window[1] - self.y_window[0]) / abs(self.momentum[0]))
        kick = abs(self.mu * self.gradient) * exposure
        for a, h in enumerate(spec.spacing):
            need = abs(self.momentum[a]) + 6 / self.width + (kick if a == spec.dim - 1 else 0.0)
            if need > np.pi / h:
                raise ValueError(f"axis {a} cannot resolve momenta up to {need:.3g}; refine the grid")
        self.spinor()


@dataclass
class OutcomeReport:
    labels: np.ndarray
    initial: np.ndarray
    final: np.ndarray
    fractions: dict
    born_weights: tuple
    standard_error: float
    born_ok: bool
    classification_time: float
    stable: bool
    label_changes: int = 0
    separatrix: float | None = None
    no_crossing_agreement: float | None = None
    median_agreement: float | None = None
    inconclusive: bool = False
    max_norm_drift: float = 0.0
    edge_mass: float = 0.0
    flagged_fraction: float = 0.0
    trace_times: np.ndarray | None = None
    trace_positions: np.ndarray | None = None
    trace_spin: np.ndarray | None = None
    notes: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "fractions": self.fractions,
            "born_weights": list(self.born_weights),
            "standard_error": self.standard_error,
            "born_ok": self.born_ok,
            "classification_time": self.classification_time,
            "stable": self.stable,
            "label_changes": self.label_changes,
            "separatrix": self.separatrix,
            "no_crossing_agreement": self.no_crossing_agreement,
            "median_agreement": self.median_agreement,
            "inconclusive": self.inconclusive,
            "max_norm_drift": self.max_norm_drift,
            "edge_mass": self.edge_mass,
            "flagged_fraction": self.flagged_fraction,
            "count": int(len(self.labels)),
            "notes": list(self.notes),
        }


def initial_spinor(cfg: ScenarioConfig) -> SpinorGrid:
    spec = cfg.grid()
    c = np.asarray(cfg.center, dtype=float)
    k = np.asarray(cfg.momentum, dtype=float)

    def packet(*mesh):
        r2 = sum((x - ci) ** 2 for x, ci in zip(mesh, c))
        phase = sum(ki * (x - ci) for x, ki, ci in zip(mesh, k, c))
        return np.exp(-r2 / (4 * cfg.width**2) + 1j * phase)

    psi = ComplexGrid.from_function(spec, packet).normalized()
    a, b = cfg.spinor()
    return SpinorGrid.from_spin(psi, a, b)


def branch_statistics(spec: GridSpec, states: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weight, mean z and std of z per component for stacked slices ``(S, 2, *grid)``."""
    z = spec.mesh()[-1]
    dens = np.abs(states) ** 2 * spec.cell_volume
    axes = tuple(range(2, states.ndim))
    w = dens.sum(axis=axes)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = (dens * z).sum(axis=axes) / w
        var = (dens * z**2).sum(axis=axes) / w - mean**2
    return w, mean, np.sqrt(np.maximum(var, 0))


def _join(parts: list[Evolution]) -> Evolution:
    first = parts[0]
    times = np.concatenate([first.times] + [p.times[1:] for p in parts[1:]])
    states = np.concatenate([first.states] + [p.states[1:] for p in parts[1:]])
    evo = Evolution(
        first.spec,
        times,
        states,
        first.spinor,
        max_norm_drift=sum(p.max_norm_drift for p in parts),
        edge_mass=max(p.edge_mass for p in parts),
        edge_tol=first.edge_tol,
        max_slice_phase_step=max(p.max_slice_phase_step for p in parts),
        steps_taken=sum(p.steps_taken for p in parts),
    )
    for p in parts:
        evo.notes.extend(p.notes)
    return evo


def _evolve_until_separated(cfg: ScenarioConfig, psi: SpinorGrid, coupling: PauliCoupling):
    """Evolve in chunks until the branches are ``stability[1]`` combined widths apart."""
    spec = psi.spec
    w0 = psi.weights()
    single = min(w0) == 0
    target = cfg.stability[1]
    chunk = 0.5
    parts, t, values = [], 0.0, psi
    while True:
        t_end = min(t + chunk, cfg.max_time)
        grid = _time_grid([t_end - t], cfg.slice_dt) + t
        for tb in (coupling.t_on, coupling.t_off):
            if t < tb < t_end:
                grid = np.union1d(grid, [tb])
        evo = record_evolution(values, Potential.none(), grid, coupling=coupling, norm_tol=1e-8)
        parts.append(evo)
        t, values = t_end, evo.state(len(evo) - 1)
        evo_all = _join(parts) if len(parts) > 1 else parts[0]
        if t >= cfg.max_time - 1e-12:
            return evo_all, False
        if single:
            # nothing to separate: follow the packet a little past the magnet
            if np.isfinite(coupling.t_off) and t >= coupling.t_off + 1.0 - 1e-12:
                return evo_all, True
            continue
        if t < coupling.t_off and np.isfinite(coupling.t_off):
            continue
        _, mean, std = branch_statistics(spec, evo.states[-1:])
        if abs(mean[0, 0] - mean[0, 1]) >= target * (std[0, 0] + std[0, 1]):
            return evo_all, True


def _classify(final: np.ndarray, midpoint: float | None, present: int | None) -> np.ndarray:
    labels = np.full(len(final), INDETERMINATE, dtype=int)
    ok = np.all(np.isfinite(final), axis=1)
    if present is not None:
        labels[ok] = present
    else:
        labels[ok] = np.where(final[ok, -1] > midpoint, UP, DOWN)
    return labels


def run_stern_gerlach(cfg: ScenarioConfig) -> OutcomeReport:
    """Spinor packet through a field-gradient window; one branch label per trajectory."""
    cfg.validate()
    psi0 = initial_spinor(cfg)
    spec = psi0.spec
    coupling = PauliCoupling(cfg.mu, cfg.gradient, cfg.b0, cfg.t_on, cfg.t_off, cfg.y_window)
    evo, separated = _evolve_until_separated(cfg, psi0, coupling)
    w, mean, std = branch_statistics(spec, evo.states)
    wu, wd = float(w[0, 0]), float(w[0, 1])
    single = min(wu, wd) == 0
    ratio = np.abs(mean[:, 0] - mean[:, 1]) / (std[:, 0] + std[:, 1])
    past = evo.times >= min(coupling.t_off, evo.times[-1])

    def first_time(k):
        if single:
            return evo.times[-1]
        hit = np.flatnonzero(past & (ratio >= k))
        return evo.times[hit[0]] if len(hit) else None

    check_times = {k: first_time(k) for k in sorted({cfg.stability[0], cfg.separation, cfg.stability[1]})}
    notes = list(evo.notes)
    inconclusive = not separated or any(v is None for v in check_times.values())
    if inconclusive:
        notes.append("branches did not separate within max_time")
        check_times = {k: (v if v is not None else evo.times[-1]) for k, v in check_times.items()}
    t_class = check_times[cfg.separation]

    positions = sample_density(psi0, EnsembleSpec(cfg.count, cfg.seed))
    field_v = SliceVelocityField(evo)
    trace_grid = evo.times[np.isclose(np.mod(evo.times / cfg.trace_dt + 0.5, 1.0) - 0.5, 0, atol=1e-6)]
    t_eval = np.union1d(trace_grid, list(check_times.values()))
    t_eval = t_eval[t_eval <= evo.times[-1]]
    ens = integrate_ensemble(
        field_v, positions, 0.0, float(t_eval[-1]), t_eval=t_eval, tol=cfg.tolerance,
        wrap=spec, workers=cfg.workers,
    )

    present = (UP if wd == 0 else DOWN) if single else None
    label_sets = {}
    for k, tk in check_times.items():
        i = int(np.argmin(np.abs(t_eval - tk)))
        mid = None if single else 0.5 * (mean[evo.index_of(tk), 0] + mean[evo.index_of(tk), 1])
        label_sets[k] = _classify(ens.at(i), mid, present)
    labels = label_sets[cfg.separation]
    n = len(labels)
    label_changes = max(int(np.sum(v != labels)) for v in label_sets.values())
    fractions = {
        "up": float(np.mean(labels == UP)),
        "down": float(np.mean(labels == DOWN)),
        "indeterminate": float(np.mean(labels == INDETERMINATE)),
    }
    p = wu / (wu + wd)
    se = float(np.sqrt(p * (1 - p) / n))
    decided = labels != INDETERMINATE
    up_decided = float(np.mean(labels[decided] == UP)) if decided.any() else float("nan")
    # a trajectory sitting in the residual overlap may switch side between thresholds;
    # the outcome counts as stable when the up fraction moves by less than one standard error
    stable = all(abs(np.mean(v == UP) - fractions["up"]) <= se for v in label_sets.values())
    born_ok = bool(abs(up_decided - p) <= 3 * se) if se > 0 else bool(up_decided == p)

    separatrix = agreement = median_agreement = None
    if spec.dim == 1 or cfg.y_window is None:
        # z-motion is one-dimensional here and trajectories keep their z order,
        # so the lowest |beta|^2 of the mass goes down
        zspec = GridSpec.line(spec.extent[-1], spec.points[-1], spec.origin[-1])
        marginal = psi0.density().reshape(-1, spec.points[-1]).sum(axis=0)
        line = LineDensity(zspec, marginal)
        z0 = positions[:, -1]
        if 0 < wd / (wu + wd) < 1:
            separatrix = float(line.ppf(np.array([wd / (wu + wd)]))[0])
            predicted = np.where(z0 > separatrix, UP, DOWN)
        else:
            predicted = np.full(n, present)
        agreement = float(np.mean(predicted[decided] == labels[decided]))
        med = np.where(z0 > np.median(z0), UP, DOWN) if not single else predicted
        median_agreement = float(np.mean(med[decided] == labels[decided]))

    k = min(cfg.trace_count, n)
    rows = np.searchsorted(evo.times, trace_grid - 1e-12)
    spins = np.full((k, len(trace_grid), 3), np.nan)
    tpos = ens.positions[:k][:, np.searchsorted(t_eval, trace_grid - 1e-12)]
    for j, r in enumerate(rows):
        pts = tpos[:, j]
        good = np.all(np.isfinite(pts), axis=1)
        if good.any():
            spins[good, j] = np.atleast_2d(spin_vector(evo.state(int(r)), pts[good]))

    return OutcomeReport(
        labels=labels,
        initial=positions,
        final=ens.at(int(np.argmin(np.abs(t_eval - t_class)))),
        fractions=fractions,
        born_weights=(wu, wd),
        standard_error=se,
        born_ok=born_ok,
        classification_time=float(t_class),
        stable=stable,
        label_changes=label_changes,
        separatrix=separatrix,
        no_crossing_agreement=agreement,
        median_agreement=median_agreement,
        inconclusive=inconclusive or not evo.valid,
        max_norm_drift=evo.max_norm_drift,
        edge_mass=evo.edge_mass,
        flagged_fraction=ens.flagged_fraction,
        trace_times=trace_grid,
        trace_positions=tpos,
        trace_spin=spins,
        notes=notes,
    )


def stern_gerlach_2d(**overrides) -> ScenarioConfig:
    """Packet on a (y, z) plane; a time-windowed gradient deflects it along z."""
    base = dict(
        extent=(20.0, 64.0),
        points=(64, 512),
        center=(0.0, 0.0),
        momentum=(0.0, 0.0),
        count=4000,
        slice_dt=0.02,
        max_time=6.0,
        trace_dt=0.1,
    )
    base.update(overrides)
    return ScenarioConfig(**base)


# field branching demo


@dataclass
class BranchingConfig:
    n_sites: int = 32
    n_modes: int = 8
    pointer_mode: int = 0
    pointer_frequency: float = 1.0
    force: float = 4.0
    weights: tuple = (0.36, 0.64)
    static: tuple = (0.0, 0.0)
    duration: float | None = None  # default: half a pointer period
    runs: int = 1000
    seed: int = 0
    trace_steps: int = 40
    tolerance: float = 1e-9
    separation: float = 8.0
    contamination_limit: float = 1e-6
    profile_width: float = 2.0
    workers: int = 1

    def validate(self):
        if not 0 <= self.pointer_mode < self.n_modes:
            raise ValueError("pointer mode out of range")
        w = np.asarray(self.weights, dtype=float)
        if len(w) != 2 or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("weights must be two non-negative numbers summing to one")
        if self.pointer_frequency <= 0 or self.runs < 1:
            raise ValueError("need a positive pointer frequency and at least one run")


@dataclass
class BranchingReport:
    times: np.ndarray
    energy_density: np.ndarray  # (T, sites) for the traced run
    field_trace: np.ndarray  # (T, sites)
    mode_trace: np.ndarray  # (T, M)
    branch_profiles: np.ndarray  # (2, sites)
    branch_weights: np.ndarray
    final_branch: int
    contamination: float
    worst_contamination: float
    channel_leak: float
    separation_widths: float
    frequencies: np.ndarray
    standard_error: float
    frequency_ok: bool
    flagged_fraction: float
    inconclusive: bool = False
    notes: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "branch_weights": self.branch_weights.tolist(),
            "frequencies": self.frequencies.tolist(),
            "standard_error": self.standard_error,
            "frequency_ok": self.frequency_ok,
            "final_branch": self.final_branch,
            "contamination": self.contamination,
            "worst_contamination": self.worst_contamination,
            "channel_leak": self.channel_leak,
            "separation_widths": self.separation_widths,
            "flagged_fraction": self.flagged_fraction,
            "inconclusive": self.inconclusive,
            "notes": list(self.notes),
        }


def branching_functional(cfg: BranchingConfig) -> fm.WaveFunctional:
    probe = fm.ModeBasis.lattice(cfg.n_sites, cfg.n_modes)
    scale = cfg.pointer_frequency / probe.frequencies[cfg.pointer_mode]
    basis = fm.ModeBasis.lattice(cfg.n_sites, cfg.n_modes, scale)
    coupling = fm.LabelCoupling(np.diag(cfg.static), np.diag([cfg.force, -cfg.force]), cfg.pointer_mode)
    labels = np.sqrt(np.asarray(cfg.weights, dtype=float))
    return fm.WaveFunctional.ground_state(basis, labels, coupling)


def _contamination(E: np.ndarray, profiles: np.ndarray, branch: np.ndarray) -> np.ndarray:
    ref = profiles[branch]
    return np.max(np.abs(E - ref), axis=-1) / np.max(np.abs(ref), axis=-1)


def run_branching_demo(cfg: BranchingConfig) -> BranchingReport:
    """Two labels pushed apart along one pointer mode; tracks the conditional energy density."""
    cfg.validate()
    W = branching_functional(cfg)
    basis = W.basis
    omega = basis.frequencies[cfg.pointer_mode]
    T = np.pi / omega if cfg.duration is None else cfg.duration
    emat = fm.two_packet_profile(cfg.n_sites, width=cfg.profile_width)
    u = W.coupling.channels()[0]
    profiles = np.array([fm.branch_profile(emat, u[:, n]) for n in range(2)])
    weights = W.branch_weights()

    WT = fm.evolve_functional(W, T, 1)
    stack = fm._channel_stack(WT)
    notes = []
    if len(stack.labels) == 2:
        sd = np.sqrt(1 / (4 * stack.width[:, cfg.pointer_mode].real))
        gap = abs(stack.mean[0, cfg.pointer_mode] - stack.mean[1, cfg.pointer_mode])
        sep = float(gap / sd.sum())
    else:
        sep = float("inf")
        notes.append("only one branch carries weight")
    inconclusive = sep < cfg.separation
    if inconclusive:
        notes.append(f"branches only {sep:.3g} combined widths apart")

    q0 = fm.sample_functional(W, cfg.runs, cfg.seed)
    times = np.linspace(0.0, T, cfg.trace_steps + 1)
    ens = fm.integrate_field(W, q0, 0.0, T, cfg.tolerance, t_eval=times, workers=cfg.workers)
    good = ~ens.flagged
    qT = ens.final()[good]
    cw = fm.channel_weights_at(WT, qT)
    branch = np.argmax(cw, axis=1)
    freq = np.bincount(branch, minlength=2) / len(branch)
    se = float(np.sqrt(weights[0] * (1 - weights[0]) / len(branch)))
    freq_ok = bool(abs(freq[0] - weights[0]) <= 3 * se) if se > 0 else bool(freq[0] == weights[0])

    E_all = fm.energy_density(WT, qT, emat)
    cont = _contamination(E_all, profiles, branch)

    traced = ens.trajectory(int(np.flatnonzero(good)[0]))
    E_trace = np.array([fm.energy_density(W, traced.positions[i], emat, t=t) for i, t in enumerate(times)])
    return BranchingReport(
        times=times,
        energy_density=E_trace,
        field_trace=basis.to_field(traced.positions),
        mode_trace=traced.positions,
        branch_profiles=profiles,
        branch_weights=weights,
        final_branch=int(np.argmax(fm.channel_weights_at(WT, traced.positions[-1]))),
        contamination=float(_contamination(E_trace[-1], profiles, np.argmax(fm.channel_weights_at(WT, traced.positions[-1])))),
        worst_contamination=float(np.max(cont)),
        channel_leak=float(np.max(1 - np.max(cw, axis=1))),
        separation_widths=sep,
        frequencies=freq,
        standard_error=se,
        frequency_ok=freq_ok,
        flagged_fraction=ens.flagged_fraction,
        inconclusive=inconclusive,
        notes=notes,
    )
