"""Uniform periodic grids, spectral transforms and Catmull-Rom interpolation.

All dynamics use internal units with hbar = m = 1. A grid spans
``[origin, origin + extent)`` along every axis with periodic wrap.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class GridError(ValueError):
    """Raised for malformed grids or non-finite amplitudes."""


@dataclass(frozen=True)
class GridSpec:
    extent: tuple[float, ...]
    points: tuple[int, ...]
    origin: tuple[float, ...] | None = None

    def __post_init__(self):
        extent = tuple(float(e) for e in np.atleast_1d(self.extent))
        points = tuple(int(p) for p in np.atleast_1d(self.points))
        if len(extent) != len(points) or len(extent) not in (1, 2):
            raise GridError(f"grid must be 1D or 2D, got extent={extent} points={points}")
        if any(p < 8 for p in points):
            raise GridError(f"need at least 8 points per axis, got {points}")
        if any(not np.isfinite(e) or e <= 0 for e in extent):
            raise GridError(f"extent must be positive and finite, got {extent}")
        origin = self.origin
        if origin is None:
            origin = tuple(-e / 2 for e in extent)
        origin = tuple(float(o) for o in np.atleast_1d(origin))
        if len(origin) != len(extent):
            raise GridError("origin must have one entry per axis")
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def line(cls, extent: float, points: int, origin: float | None = None) -> "GridSpec":
        return cls((extent,), (points,), None if origin is None else (origin,))

    @property
    def dim(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / n for e, n in zip(self.extent, self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def axis(self, i: int) -> np.ndarray:
        return self.origin[i] + self.spacing[i] * np.arange(self.points[i])

    def axes(self) -> list[np.ndarray]:
        return [self.axis(i) for i in range(self.dim)]

    def mesh(self) -> list[np.ndarray]:
        """Coordinate arrays with the grid's shape (``ij`` indexing)."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def wavenumbers(self) -> list[np.ndarray]:
        return [2 * np.pi * np.fft.fftfreq(n, d=h) for n, h in zip(self.points, self.spacing)]

    def k_mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.wavenumbers(), indexing="ij")

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Map positions of shape ``(..., dim)`` back into the periodic cell."""
        x = np.asarray(x, dtype=float)
        lo = np.asarray(self.origin)
        ext = np.asarray(self.extent)
        return lo + np.mod(x - lo, ext)


@dataclass(frozen=True, eq=False)
class ComplexGrid:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.shape != self.spec.shape:
            raise GridError(f"values shape {values.shape} does not match grid {self.spec.shape}")
        if not np.all(np.isfinite(values)):
            raise GridError("grid values must be finite")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, spec: GridSpec, fn) -> "ComplexGrid":
        return cls(spec, fn(*spec.mesh()))

    def density(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def norm(self) -> float:
        """Integral of ``|psi|^2`` with the rectangle rule."""
        return float(np.sum(self.density()) * self.spec.cell_volume)

    def normalized(self) -> "ComplexGrid":
        return ComplexGrid(self.spec, self.values / np.sqrt(self.norm()))

    def with_values(self, values: np.ndarray) -> "ComplexGrid":
        return ComplexGrid(self.spec, values)

    def __add__(self, other: "ComplexGrid") -> "ComplexGrid":
        _check_same(self, other)
        return self.with_values(self.values + other.values)

    def __mul__(self, c: complex) -> "ComplexGrid":
        return self.with_values(self.values * c)

    __rmul__ = __mul__


def _check_same(a: ComplexGrid, b: ComplexGrid):
    if a.spec != b.spec:
        raise GridError("grids live on different specs")


def spectral_transform(g: ComplexGrid, direction: str = "forward") -> ComplexGrid:
    """Unitary (``norm='ortho'``) FFT, so the sum of ``|values|^2`` is preserved."""
    if direction == "forward":
        out = np.fft.fftn(g.values, norm="ortho")
    elif direction == "inverse":
        out = np.fft.ifftn(g.values, norm="ortho")
    else:
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    return ComplexGrid(g.spec, out)


def gradient_values(spec: GridSpec, values: np.ndarray) -> np.ndarray:
    """Spectral derivative along every axis; returns shape ``(dim, *grid)``."""
    ft = np.fft.fftn(values)
    return np.stack([np.fft.ifftn(1j * k * ft) for k in spec.k_mesh()])


def gradient(g: ComplexGrid) -> list[ComplexGrid]:
    return [ComplexGrid(g.spec, d) for d in gradient_values(g.spec, g.values)]


def divergence_values(spec: GridSpec, field: np.ndarray) -> np.ndarray:
    """Spectral divergence of a real vector field of shape ``(dim, *grid)``."""
    total = np.zeros(spec.shape, dtype=complex)
    for k, comp in zip(spec.k_mesh(), field):
        total += 1j * k * np.fft.fftn(comp)
    return np.fft.ifftn(total).real


def _catmull_rom_weights(f: np.ndarray) -> np.ndarray:
    f2 = f * f
    f3 = f2 * f
    return np.stack(
        [
            0.5 * (-f3 + 2 * f2 - f),
            0.5 * (3 * f3 - 5 * f2 + 2),
            0.5 * (-3 * f3 + 4 * f2 + f),
            0.5 * (f3 - f2),
        ],
        axis=-1,
    )


def stencil(spec: GridSpec, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Node indices and Catmull-Rom weights for points ``x`` of shape ``(n, dim)``.

    Returns per-axis ``(n, 4)`` index and weight arrays.
    """
    x = np.asarray(x, dtype=float).reshape(-1, spec.dim)
    idx, wts = [], []
    for a in range(spec.dim):
        n = spec.points[a]
        u = (x[:, a] - spec.origin[a]) / spec.spacing[a]
        base = np.floor(u)
        f = u - base
        base = base.astype(np.int64)
        idx.append(np.mod(base[:, None] + np.arange(-1, 3), n))
        wts.append(_catmull_rom_weights(f))
    return idx, wts


def interpolate_many(spec: GridSpec, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Separable Catmull-Rom interpolation of grid ``values`` (leading channel axes allowed).

    ``values`` has shape ``(*channels, *grid)``; ``x`` has shape ``(n, dim)``.
    Returns ``(n, *channels)``.
    """
    idx, wts = stencil(spec, x)
    values = np.asarray(values)
    lead = values.shape[: values.ndim - spec.dim]
    flat = values.reshape(lead + (-1,)) if lead else values.reshape(1, -1)
    if spec.dim == 1:
        nodes = idx[0]
        w = wts[0]
    else:
        ny = spec.points[1]
        nodes = (idx[0][:, :, None] * ny + idx[1][:, None, :]).reshape(-1, 16)
        w = (wts[0][:, :, None] * wts[1][:, None, :]).reshape(-1, 16)
    gathered = flat[:, nodes]  # (channels, n, stencil)
    out = np.einsum("cns,ns->nc", gathered, w)
    if not lead:
        return out[:, 0]
    return out.reshape((-1,) + lead)


def interpolate(g: ComplexGrid, x) -> complex:
    """Amplitude of ``g`` at a single off-grid point (periodic wrap)."""
    x = np.asarray(x, dtype=float).reshape(1, g.spec.dim)
    return complex(interpolate_many(g.spec, g.values, x)[0])
