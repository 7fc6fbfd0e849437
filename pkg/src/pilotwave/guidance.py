"""Guidance velocities, the derived spin vector, and trajectory integration.

Velocities are ``Im(psi* grad psi) / (|psi|^2 + eps)`` (spin-summed for
spinors), formed at the grid nodes and then Catmull-Rom interpolated. The
nodal velocity is smooth even when ``psi`` carries a fast phase, and the
scheme reproduces locally linear velocity fields exactly.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .evolution import Evolution, SpinorGrid, _as_stack
from .grids import ComplexGrid, GridSpec, gradient_values, interpolate_many, stencil

EPS_FACTOR = 1e-12


def default_eps(spec: GridSpec, density: np.ndarray) -> float:
    """Node regularisation: ``1e-12`` times the mean density."""
    return EPS_FACTOR * float(np.mean(density))


def current_and_density(spec: GridSpec, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Spin-summed current ``(dim, *grid)`` and density for stacked components ``(C, *grid)``."""
    j = np.zeros((spec.dim,) + spec.shape)
    for comp in values:
        grad = gradient_values(spec, comp)
        j += np.imag(np.conj(comp)[None] * grad)
    rho = np.sum(np.abs(values) ** 2, axis=0)
    return j, rho


def nodal_velocity(j: np.ndarray, rho: np.ndarray, eps: float) -> np.ndarray:
    """``j / (rho + eps)`` with the velocity set to 0 where the denominator vanishes."""
    denom = rho + eps
    safe = denom > 0
    out = np.zeros_like(j)
    out[:, safe] = j[:, safe] / denom[safe]
    return out


def _velocity(psi, x, eps):
    spec, values = _as_stack(psi)
    j, rho = current_and_density(spec, values)
    if eps is None:
        eps = default_eps(spec, rho)
    x = np.asarray(x, dtype=float)
    single = x.ndim < 2
    pts = x.reshape(-1, spec.dim)
    v = interpolate_many(spec, nodal_velocity(j, rho, eps), pts)
    return v[0] if single else v


def velocity_scalar(psi: ComplexGrid, x, eps: float | None = None) -> np.ndarray:
    """Guidance velocity of a scalar state at ``x`` (one point or ``(n, dim)``)."""
    return _velocity(psi, x, eps)


def velocity_spinor(psi: SpinorGrid, x, eps: float | None = None) -> np.ndarray:
    """Spin-summed guidance velocity at ``x``."""
    return _velocity(psi, x, eps)


def spin_vector(psi: SpinorGrid, x, eps: float | None = None) -> np.ndarray:
    """Local spin vector ``(1/2) psi^dag sigma psi / psi^dag psi`` at ``x``.

    The spinor itself is interpolated, so the result is a pure local state
    with norm 1/2. Points where the density is at or below ``eps`` are
    indeterminate and come back as NaN.
    """
    spec = psi.spec
    if eps is None:
        eps = default_eps(spec, psi.density())
    x = np.asarray(x, dtype=float)
    single = x.ndim < 2
    pts = x.reshape(-1, spec.dim)
    comps = interpolate_many(spec, psi.values, pts)
    s = spin_from_components(comps[:, 0], comps[:, 1], eps)
    return s[0] if single else s


def spin_from_components(a: np.ndarray, b: np.ndarray, eps: float = 0.0) -> np.ndarray:
    ab = np.conj(a) * b
    dens = np.abs(a) ** 2 + np.abs(b) ** 2
    s = 0.5 * np.stack([2 * ab.real, 2 * ab.imag, np.abs(a) ** 2 - np.abs(b) ** 2], axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = s / dens[..., None]
    s[dens <= eps] = np.nan
    return s


PAULI = np.array([[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]])


def spin_from_density_matrix(rho: np.ndarray) -> np.ndarray:
    """``(1/2) tr(rho sigma) / tr(rho)`` for a 2x2 spin density matrix."""
    rho = np.asarray(rho, dtype=complex)
    return 0.5 * np.real(np.einsum("kab,ba->k", PAULI, rho)) / np.real(np.trace(rho))


class SliceVelocityField:
    """Velocity field over the slices of an :class:`Evolution`.

    Space: Catmull-Rom on nodal velocity and density. Time: linear between
    slices.
    ``scale`` multiplies the velocity (1.1 gives the corrupted negative
    control used by the equivariance checks).
    """

    def __init__(self, evolution: Evolution, eps: float | None = None, scale: float = 1.0):
        spec = evolution.spec
        self.spec = spec
        self.times = evolution.times
        self.scale = scale
        nslice = len(evolution)
        channels = np.empty((nslice, spec.dim + 1) + spec.shape)
        for i in range(nslice):
            j, rho = current_and_density(spec, evolution.states[i])
            channels[i, 0] = rho
            channels[i, 1:] = j
        if eps is None:
            eps = default_eps(spec, channels[0, 0])
        self.eps = eps
        for i in range(nslice):
            channels[i, 1:] = nodal_velocity(channels[i, 1:], channels[i, 0], eps)
        self._flat = channels.reshape(nslice, spec.dim + 1, -1)

    @property
    def breakpoints(self) -> np.ndarray:
        return self.times

    def _at_slice(self, s: np.ndarray, x: np.ndarray) -> np.ndarray:
        idx, wts = stencil(self.spec, x)
        if self.spec.dim == 1:
            nodes, w = idx[0], wts[0]
        else:
            ny = self.spec.points[1]
            nodes = (idx[0][:, :, None] * ny + idx[1][:, None, :]).reshape(len(x), -1)
            w = (wts[0][:, :, None] * wts[1][:, None, :]).reshape(len(x), -1)
        vals = self._flat[s[:, None], :, nodes]  # (n, stencil, C)
        return np.einsum("nsc,ns->nc", vals, w)

    def evaluate(self, t: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Velocities ``(n, dim)`` and densities ``(n,)`` at per-particle times."""
        t = np.broadcast_to(np.asarray(t, dtype=float), (len(x),))
        if len(self.times) == 1:
            ch = self._at_slice(np.zeros(len(x), dtype=int), x)
        else:
            i = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
            w = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
            lo = self._at_slice(i, x)
            hi = self._at_slice(i + 1, x)
            ch = lo + (hi - lo) * w[:, None]
        return ch[:, 1:] * self.scale, ch[:, 0]

    def __call__(self, t, x):
        return self.evaluate(t, x)[0]


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray  # (T, dim); NaN after truncation
    steps: int
    rejections: int
    min_density: float
    flagged: bool


@dataclass
class TrajectoryEnsemble:
    times: np.ndarray
    positions: np.ndarray  # (n, T, dim)
    steps: np.ndarray
    rejections: np.ndarray
    min_density: np.ndarray
    flagged: np.ndarray

    def __len__(self):
        return len(self.positions)

    @property
    def flagged_fraction(self) -> float:
        return float(np.mean(self.flagged)) if len(self) else 0.0

    def at(self, k: int) -> np.ndarray:
        return self.positions[:, k]

    def final(self) -> np.ndarray:
        return self.positions[:, -1]

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(
            self.times,
            self.positions[i],
            int(self.steps[i]),
            int(self.rejections[i]),
            float(self.min_density[i]),
            bool(self.flagged[i]),
        )


# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def integrate_ensemble(field, x0, t0: float, t1: float, *, workers: int = 1, chunk: int = 4096, **kw) -> TrajectoryEnsemble:
    """Integrate an ensemble, fanning fixed-size chunks out over ``workers`` threads.

    Each particle is stepped independently (see :func:`_integrate`), so the
    result does not depend on ``workers`` or ``chunk``.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = x0[:, None]
    if workers <= 1 or len(x0) <= chunk:
        return _integrate(field, x0, t0, t1, **kw)
    parts = [x0[i : i + chunk] for i in range(0, len(x0), chunk)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda p: _integrate(field, p, t0, t1, **kw), parts))
    return TrajectoryEnsemble(
        results[0].times,
        np.concatenate([r.positions for r in results]),
        np.concatenate([r.steps for r in results]),
        np.concatenate([r.rejections for r in results]),
        np.concatenate([r.min_density for r in results]),
        np.concatenate([r.flagged for r in results]),
    )


def _integrate(
    field,
    x0,
    t0: float,
    t1: float,
    *,
    t_eval=None,
    tol: float = 1e-8,
    wrap: GridSpec | None = None,
    max_steps: int = 200_000,
    h_init: float | None = None,
    h_min: float | None = None,
) -> TrajectoryEnsemble:
    """Adaptive Dormand-Prince integration of ``dx/dt = v(x, t)`` for many particles.

    Every particle carries its own time and step size, so a trajectory does
    not depend on which other particles share the batch. ``field.evaluate(t,
    x)`` must accept per-particle times. Steps are clipped to the field's
    ``breakpoints`` (stored slice times) so no step straddles a kink of the
    piecewise-linear time interpolation.

    A particle whose step size underflows ``h_min`` or that exceeds
    ``max_steps`` is truncated (NaN positions afterwards) and flagged.
    """
    if not t1 > t0:
        raise ValueError(f"need t1 > t0, got [{t0}, {t1}]")
    x = np.array(x0, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, dim = x.shape
    t_eval = np.array([t0, t1] if t_eval is None else t_eval, dtype=float)
    if np.any(np.diff(t_eval) <= 0) or t_eval[0] < t0 or t_eval[-1] > t1:
        raise ValueError("t_eval must be increasing and inside [t0, t1]")
    span = t1 - t0
    if h_min is None:
        h_min = 1e-12 * max(1.0, span)
    breaks = np.asarray(getattr(field, "breakpoints", ()), dtype=float)
    breaks = breaks[(breaks > t0) & (breaks < t1)]
    stops = np.union1d(breaks, t_eval)
    stops = stops[stops > t0]
    tiny = 1e-12 * max(1.0, abs(t1))

    out = np.full((n, len(t_eval), dim), np.nan)
    steps = np.zeros(n, dtype=np.int64)
    rejections = np.zeros(n, dtype=np.int64)
    flagged = np.zeros(n, dtype=bool)
    t = np.full(n, float(t0))
    if wrap is not None:
        x = wrap.wrap(x)
    k1, rho = field.evaluate(t, x)
    min_density = rho.astype(float).copy()
    next_out = np.zeros(n, dtype=np.int64)
    if abs(t_eval[0] - t0) <= tiny:
        out[:, 0] = x
        next_out[:] = 1
    active = next_out < len(t_eval)
    h = np.full(n, h_init if h_init is not None else min(span, 0.01 * span + 1e-3))

    while np.any(active):
        ia = np.flatnonzero(active)
        ta, xa, k1a = t[ia], x[ia], k1[ia]
        stop_idx = np.searchsorted(stops, ta + tiny, side="right")
        stop_idx = np.minimum(stop_idx, len(stops) - 1)
        t_stop = stops[stop_idx]
        ha = np.minimum(h[ia], t_stop - ta)
        ks = [k1a]
        for s in range(1, 6):
            xs = xa + ha[:, None] * sum(a * k for a, k in zip(_A[s], ks) if a != 0.0)
            if wrap is not None:
                xs = wrap.wrap(xs)
            ks.append(field.evaluate(ta + _C[s] * ha, xs)[0])
        x5 = xa + ha[:, None] * sum(b * k for b, k in zip(_B5, ks) if b != 0.0)
        if wrap is not None:
            x5 = wrap.wrap(x5)
        k7, rho7 = field.evaluate(ta + ha, x5)
        ks.append(k7)
        err_vec = ha[:, None] * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
        scale = tol * (1.0 + np.abs(xa))
        err = np.max(np.abs(err_vec) / scale, axis=1)
        err[~np.isfinite(err) | ~np.all(np.isfinite(k7), axis=1)] = np.inf
        ok = err <= 1.0

        acc = ia[ok]
        t[acc] = np.where(np.abs(ta[ok] + ha[ok] - t_stop[ok]) <= tiny, t_stop[ok], ta[ok] + ha[ok])
        x[acc] = x5[ok]
        k1[acc] = k7[ok]
        steps[acc] += 1
        min_density[acc] = np.minimum(min_density[acc], rho7[ok])
        rejections[ia[~ok]] += 1

        with np.errstate(divide="ignore"):
            factor = np.where(err == 0, 5.0, 0.9 * err ** (-0.2))
        factor = np.clip(factor, 0.2, 5.0)
        factor[~ok] = np.minimum(factor[~ok], 0.9)
        factor[~np.isfinite(err)] = 0.2
        h[ia] = ha * factor

        # record outputs for particles that just reached their next output time
        reached = acc[np.abs(t[acc] - t_eval[np.minimum(next_out[acc], len(t_eval) - 1)]) <= tiny]
        out[reached, next_out[reached]] = x[reached]
        next_out[reached] += 1

        bad = ia[(~ok) & (h[ia] < h_min)]
        bad = np.union1d(bad, ia[steps[ia] >= max_steps])
        flagged[bad] = True
        active = (next_out < len(t_eval)) & ~flagged
        # an output beyond a flagged particle's reach stays NaN

    return TrajectoryEnsemble(t_eval, out, steps, rejections, min_density, flagged)


def integrate_trajectory(field, x0, t0: float, t1: float, tolerance: float = 1e-8, **kw) -> Trajectory:
    """Single-trajectory wrapper around :func:`integrate_ensemble`."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))[None]
    return integrate_ensemble(field, x0, t0, t1, tol=tolerance, **kw).trajectory(0)
