"""Sampling from |psi|^2 and statistical checks that the guidance flow preserves it."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .evolution import Evolution, Potential, PauliCoupling, SpinorGrid, _as_stack, record_evolution
from .grids import GridSpec, divergence_values
from .guidance import (
    SliceVelocityField,
    TrajectoryEnsemble,
    current_and_density,
    default_eps,
    integrate_ensemble,
)

log = logging.getLogger(__name__)

MIN_STATISTICAL_COUNT = 100


@dataclass(frozen=True)
class EnsembleSpec:
    count: int
    seed: int
    sampler: str = "auto"  # "inverse-cdf" (1D), "rejection" (2D) or "auto"

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("ensemble count must be positive")
        if self.sampler not in ("auto", "inverse-cdf", "rejection"):
            raise ValueError(f"unknown sampler {self.sampler!r}")


class LineDensity:
    """Periodic piecewise-linear density through the grid nodes.

    Sampling inverts its CDF exactly (quadratic per cell), so the KS test
    against :meth:`cdf` checks the dynamics and not the sampler.
    """

    def __init__(self, spec: GridSpec, density: np.ndarray):
        if spec.dim != 1:
            raise ValueError("LineDensity needs a 1D grid")
        d = np.clip(np.asarray(density, dtype=float), 0.0, None)
        self.spec = spec
        self.h = spec.spacing[0]
        self.x0 = spec.origin[0]
        self.left = d
        self.right = np.roll(d, -1)
        mass = 0.5 * self.h * (self.left + self.right)
        self.total = float(mass.sum())
        if not self.total > 0:
            raise ValueError("density has no mass")
        self.cum = np.concatenate([[0.0], np.cumsum(mass)]) / self.total

    def cdf(self, x) -> np.ndarray:
        u = (self.spec.wrap(np.asarray(x, dtype=float)[..., None])[..., 0] - self.x0) / self.h
        i = np.minimum(np.floor(u).astype(np.int64), len(self.left) - 1)
        s = (u - i) * self.h
        a = self.left[i]
        slope = (self.right[i] - a) / self.h
        partial = a * s + 0.5 * slope * s * s
        return self.cum[i] + partial / self.total

    def ppf(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        i = np.clip(np.searchsorted(self.cum, q, side="right") - 1, 0, len(self.left) - 1)
        r = (q - self.cum[i]) * self.total
        a = self.left[i]
        slope = (self.right[i] - a) / self.h
        root = np.sqrt(np.maximum(a * a + 2 * slope * r, 0.0))
        denom = a + root
        with np.errstate(invalid="ignore", divide="ignore"):
            s = np.where(denom > 0, 2 * r / denom, 0.0)
        s = np.clip(s, 0.0, self.h)
        return self.x0 + i * self.h + s


def _density(psi) -> tuple[GridSpec, np.ndarray]:
    spec, values = _as_stack(psi)
    return spec, np.sum(np.abs(values) ** 2, axis=0)


def _cell_probabilities(spec: GridSpec, density: np.ndarray) -> np.ndarray:
    """Exact bilinear mass per cell (cell (i, j) spans nodes i..i+1, j..j+1)."""
    d = np.clip(density, 0.0, None)
    corners = d + np.roll(d, -1, 0) + np.roll(d, -1, 1) + np.roll(np.roll(d, -1, 0), -1, 1)
    mass = 0.25 * corners
    return mass / mass.sum()


def _bilinear(spec: GridSpec, density: np.ndarray, x: np.ndarray) -> np.ndarray:
    u = (x - np.asarray(spec.origin)) / np.asarray(spec.spacing)
    i = np.floor(u).astype(np.int64)
    f = u - i
    nx, ny = spec.points
    i0, j0 = i[:, 0] % nx, i[:, 1] % ny
    i1, j1 = (i0 + 1) % nx, (j0 + 1) % ny
    fx, fy = f[:, 0], f[:, 1]
    return (
        density[i0, j0] * (1 - fx) * (1 - fy)
        + density[i1, j0] * fx * (1 - fy)
        + density[i0, j1] * (1 - fx) * fy
        + density[i1, j1] * fx * fy
    )


def _rejection_2d(spec: GridSpec, density: np.ndarray, count: int, rng) -> np.ndarray:
    d = np.clip(density, 0.0, None)
    top = d.max()
    cell_max = np.maximum.reduce([d, np.roll(d, -1, 0), np.roll(d, -1, 1), np.roll(np.roll(d, -1, 0), -1, 1)])
    support = np.flatnonzero(cell_max > 1e-14 * top)
    ny = spec.points[1]
    h = np.asarray(spec.spacing)
    lo = np.asarray(spec.origin)
    out = []
    have = 0
    batch = max(4 * count, 1024)
    while have < count:
        cells = support[rng.integers(0, len(support), batch)]
        ij = np.stack([cells // ny, cells % ny], axis=1)
        pts = lo + (ij + rng.random((batch, 2))) * h
        accept = rng.random(batch) * top < _bilinear(spec, d, pts)
        out.append(pts[accept])
        have += int(accept.sum())
    return np.concatenate(out)[:count]


def sample_density(psi, spec: EnsembleSpec, *, norm_tol: float = 1e-6) -> np.ndarray:
    """I.i.d. draws from ``|psi|^2``; returns ``(count, dim)``, deterministic in the seed."""
    gspec, dens = _density(psi)
    norm = float(dens.sum() * gspec.cell_volume)
    if abs(norm - 1.0) > norm_tol:
        raise ValueError(f"psi must be normalized to sample from it, got norm {norm:.9g}")
    sampler = spec.sampler
    if sampler == "auto":
        sampler = "inverse-cdf" if gspec.dim == 1 else "rejection"
    rng = np.random.default_rng(spec.seed)
    if sampler == "inverse-cdf":
        if gspec.dim != 1:
            raise ValueError("inverse-CDF sampling is 1D only")
        return LineDensity(gspec, dens).ppf(rng.random(spec.count))[:, None]
    if gspec.dim != 2:
        raise ValueError("rejection sampling is implemented for 2D grids")
    return _rejection_2d(gspec, dens, spec.count, rng)


def ks_against_density(spec: GridSpec, density: np.ndarray, positions: np.ndarray):
    """One-sample KS of 1D positions against the piecewise-linear density."""
    line = LineDensity(spec, density)
    res = stats.kstest(spec.wrap(positions.reshape(-1, 1))[:, 0], line.cdf)
    return float(res.statistic), float(res.pvalue)


def chi2_against_density(spec: GridSpec, density: np.ndarray, positions: np.ndarray, bins: int = 32):
    """Binned chi-square of 2D positions against the bilinear density.

    Cells are grouped into blocks giving at most ``bins`` per axis; blocks
    expecting fewer than 5 counts are pooled into one.
    """
    n = len(positions)
    prob = _cell_probabilities(spec, density)
    block = [max(1, p // bins) for p in spec.points]
    nbx, nby = (spec.points[0] + block[0] - 1) // block[0], (spec.points[1] + block[1] - 1) // block[1]
    cell_bin_x = np.arange(spec.points[0]) // block[0]
    cell_bin_y = np.arange(spec.points[1]) // block[1]
    expected = np.zeros((nbx, nby))
    np.add.at(expected, (cell_bin_x[:, None], cell_bin_y[None, :]), prob)
    expected *= n
    x = spec.wrap(positions)
    cells = np.floor((x - np.asarray(spec.origin)) / np.asarray(spec.spacing)).astype(np.int64)
    cells[:, 0] %= spec.points[0]
    cells[:, 1] %= spec.points[1]
    observed = np.zeros((nbx, nby))
    np.add.at(observed, (cell_bin_x[cells[:, 0]], cell_bin_y[cells[:, 1]]), 1)
    e, o = expected.ravel(), observed.ravel()
    small = e < 5
    e = np.concatenate([e[~small], [e[small].sum()]])
    o = np.concatenate([o[~small], [o[small].sum()]])
    keep = e > 0
    e, o = e[keep], o[keep]
    stat = float(np.sum((o - e) ** 2 / e))
    dof = len(e) - 1
    return stat, float(stats.chi2.sf(stat, dof))


@dataclass
class EquivarianceReport:
    times: list[float]
    statistics: list[float]
    p_values: list[float]
    passed: list[bool]
    alpha: float
    alpha_per_time: float
    method: str
    count: int
    seed: int
    flagged: int
    velocity_scale: float = 1.0
    inconclusive: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def flagged_fraction(self) -> float:
        return self.flagged / self.count if self.count else 0.0

    @property
    def ok(self) -> bool:
        return all(self.passed) and not self.inconclusive

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flagged_fraction"] = self.flagged_fraction
        d["ok"] = self.ok
        return d


def _time_grid(times, slice_dt: float) -> np.ndarray:
    tmax = max(times)
    if tmax <= 0:
        return np.array([0.0])
    n = int(np.ceil(tmax / slice_dt - 1e-9))
    grid = np.linspace(0.0, tmax, n + 1)
    merged = np.union1d(grid, np.asarray(times, dtype=float))
    # drop grid points that nearly coincide with a probe time
    keep = np.concatenate([[True], np.diff(merged) > 1e-9 * max(1.0, tmax)])
    return merged[keep]


def transport(
    psi0,
    V: Potential,
    ensemble: EnsembleSpec,
    times,
    *,
    coupling: PauliCoupling | None = None,
    velocity_scale: float = 1.0,
    slice_dt: float = 0.01,
    dt_max: float | None = None,
    tol: float = 1e-8,
    workers: int = 1,
):
    """Sample at t = 0, evolve, and carry the ensemble to ``times``.

    Returns ``(evolution, trajectory ensemble)``.
    """
    grid_times = _time_grid(times, slice_dt)
    evo = record_evolution(psi0, V, grid_times, coupling=coupling, dt_max=dt_max)
    x0 = sample_density(psi0, ensemble)
    probe = np.asarray(times, dtype=float)
    if grid_times[-1] <= 0:
        n = len(x0)
        pos = np.repeat(x0[:, None, :], len(probe), axis=1)
        zeros = np.zeros(n, dtype=np.int64)
        ens = TrajectoryEnsemble(probe, pos, zeros, zeros, np.full(n, np.nan), np.zeros(n, dtype=bool))
        return evo, ens
    fld = SliceVelocityField(evo, scale=velocity_scale)
    ens = integrate_ensemble(
        fld, x0, 0.0, float(grid_times[-1]), t_eval=probe, tol=tol, wrap=evo.spec, workers=workers
    )
    return evo, ens


def check_equivariance(
    psi0,
    V: Potential,
    spec: EnsembleSpec,
    times,
    *,
    alpha: float = 0.01,
    velocity_scale: float = 1.0,
    slice_dt: float = 0.01,
    dt_max: float | None = None,
    tol: float = 1e-8,
    coupling: PauliCoupling | None = None,
    workers: int = 1,
    max_flagged_fraction: float = 0.01,
) -> EquivarianceReport:
    """Transport a |psi0|^2 ensemble and test it against |psi(t)|^2 at each probe time.

    1D: one-sample KS; 2D: binned chi-square. Each time is tested at
    ``alpha / len(times)`` (Bonferroni). Flagged trajectories are excluded;
    more than ``max_flagged_fraction`` of them marks the report inconclusive.
    """
    if spec.count < MIN_STATISTICAL_COUNT:
        raise ValueError(f"statistical checks need count >= {MIN_STATISTICAL_COUNT}")
    times = [float(t) for t in times]
    if not times or any(t < 0 for t in times) or sorted(times) != times or len(set(times)) != len(times):
        raise ValueError("probe times must be distinct, non-negative and increasing")
    evo, ens = transport(
        psi0, V, spec, times,
        coupling=coupling, velocity_scale=velocity_scale, slice_dt=slice_dt,
        dt_max=dt_max, tol=tol, workers=workers,
    )
    gspec = evo.spec
    method = "ks" if gspec.dim == 1 else "chi2"
    per = alpha / len(times)
    good = ~ens.flagged
    stats_, pvals, passed = [], [], []
    dens_all = evo.densities()
    for k, t in enumerate(times):
        dens = dens_all[evo.index_of(t)]
        pos = ens.at(k)[good]
        if method == "ks":
            st, p = ks_against_density(gspec, dens, pos)
        else:
            st, p = chi2_against_density(gspec, dens, pos)
        stats_.append(st)
        pvals.append(p)
        passed.append(bool(p >= per))
    report = EquivarianceReport(
        times, stats_, pvals, passed, alpha, per, method, spec.count, spec.seed,
        int(ens.flagged.sum()), velocity_scale,
    )
    if report.flagged_fraction > max_flagged_fraction:
        report.inconclusive = True
        report.notes.append(f"flagged fraction {report.flagged_fraction:.3%} (under-resolved?)")
    if not evo.valid:
        report.inconclusive = True
        report.notes.extend(evo.notes)
    return report


@dataclass
class ResidualReport:
    times: np.ndarray
    max_norm: np.ndarray
    l2_norm: np.ndarray


def continuity_residual(evolution: Evolution, eps: float | None = None) -> ResidualReport:
    """Residual of ``d|psi|^2/dt + div(|psi|^2 grad S)`` at interior slices.

    ``grad S`` is ``j / |psi|^2`` (so ``|psi|^2 grad S`` is the regularised
    current); the time derivative is a central difference, which needs
    uniformly spaced slices.
    """
    times = evolution.times
    if len(times) < 3:
        raise ValueError("need at least 3 slices")
    dts = np.diff(times)
    if np.max(np.abs(dts - dts[0])) > 1e-9 * dts[0]:
        raise ValueError("continuity residual needs uniformly spaced slices")
    spec = evolution.spec
    dens = evolution.densities()
    if eps is None:
        eps = default_eps(spec, dens[0])
    out_t, mx, l2 = [], [], []
    for i in range(1, len(times) - 1):
        j, rho = current_and_density(spec, evolution.states[i])
        flux = j * (rho / (rho + eps))[None]
        res = (dens[i + 1] - dens[i - 1]) / (2 * dts[0]) + divergence_values(spec, flux)
        out_t.append(times[i])
        mx.append(np.max(np.abs(res)))
        l2.append(np.sqrt(np.sum(res**2) * spec.cell_volume))
    return ResidualReport(np.array(out_t), np.array(mx), np.array(l2))
