"""Macroscopic-distinguishability thresholds in SI units.

Each bound returns a :class:`BoundReport` carrying the inputs with their
unit tags, the threshold, and (optionally) a check of a candidate value
against ``threshold * margin``, the operational meaning of "much greater".
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

DEFAULT_MARGIN = 100.0

UNITS = {
    "a": "m",
    "rho": "m^-3",
    "Lambda": "m^-1",
    "L": "m",
    "V": "m^3",
    "b": "m",
    "ratio": "1",
}


@dataclass
class BoundReport:
    bound: str
    formula: str
    inputs: dict[str, float]
    input_units: dict[str, str]
    threshold: float
    threshold_unit: str
    margin: float = DEFAULT_MARGIN
    candidate: float | None = None
    extras: dict[str, float] = field(default_factory=dict)

    @property
    def satisfied(self) -> bool | None:
        """``candidate / threshold > margin``; None when no candidate was given."""
        if self.candidate is None:
            return None
        return self.candidate / self.threshold > self.margin

    def to_dict(self) -> dict:
        d = asdict(self)
        d["satisfied"] = self.satisfied
        return d


def _positive(**kw):
    for name, value in kw.items():
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            raise ValueError(f"{name} must be a positive finite number, got {value!r}")


def _units(*names):
    return {n: UNITS[n] for n in names}


def euler_angle_length(a: float, rho: float) -> float:
    """``1 / (a rho^(2/3))`` in metres."""
    _positive(a=a, rho=rho)
    return 1.0 / (a * rho ** (2.0 / 3.0))


def euler_angle_bound(a: float, rho: float, *, candidate: float | None = None, margin: float = DEFAULT_MARGIN) -> BoundReport:
    """Region size ``L`` needed before ``L a rho^(2/3)`` is large.

    ``a``: lattice spacing [m]; ``rho``: particle density [m^-3].
    """
    return BoundReport(
        "euler-angle",
        "L* = 1 / (a * rho**(2/3))",
        {"a": float(a), "rho": float(rho)},
        _units("a", "rho"),
        euler_angle_length(a, rho),
        UNITS["L"],
        margin,
        candidate,
    )


def dirac_sea_volume(Lambda: float, rho: float) -> float:
    _positive(Lambda=Lambda, rho=rho)
    return (Lambda / rho**2) ** 0.6


def sphere_radius(volume: float) -> float:
    return (3.0 * volume / (4.0 * math.pi)) ** (1.0 / 3.0)


def dirac_sea_bound(Lambda: float, rho: float, *, margin: float = DEFAULT_MARGIN) -> tuple[BoundReport, BoundReport]:
    """Minimal region volume ``(Lambda / rho^2)^(3/5)`` and the matching sphere radius."""
    v = dirac_sea_volume(Lambda, rho)
    inputs = {"Lambda": float(Lambda), "rho": float(rho)}
    vol = BoundReport(
        "dirac-sea-volume", "V* = (Lambda / rho**2)**(3/5)", inputs, _units("Lambda", "rho"), v, UNITS["V"], margin
    )
    rad = BoundReport(
        "dirac-sea-radius",
        "b* = (3 V* / (4 pi))**(1/3)",
        dict(inputs),
        _units("Lambda", "rho"),
        sphere_radius(v),
        UNITS["b"],
        margin,
        extras={"V*": v},
    )
    return vol, rad


def density_ratio(rho: float, Lambda: float) -> float:
    """``1 + 8 pi^2 rho / Lambda^3`` (rounds to 1.0 for realistic inputs)."""
    return 1.0 + density_ratio_excess(rho, Lambda)


def density_ratio_excess(rho: float, Lambda: float) -> float:
    """``8 pi^2 rho / Lambda^3``, the part of the ratio above one."""
    _positive(rho=rho, Lambda=Lambda)
    return 8.0 * math.pi**2 * rho / Lambda**3


def density_ratio_report(rho: float, Lambda: float) -> BoundReport:
    return BoundReport(
        "density-ratio",
        "1 + 8 pi**2 rho / Lambda**3",
        {"rho": float(rho), "Lambda": float(Lambda)},
        _units("rho", "Lambda"),
        density_ratio(rho, Lambda),
        UNITS["ratio"],
        extras={"excess": density_ratio_excess(rho, Lambda)},
    )


def leading_digit(x: float) -> tuple[int, int]:
    """``(d, e)`` with ``x`` rounded to one significant figure as ``d * 10**e``."""
    if not x > 0:
        raise ValueError("need a positive number")
    e = math.floor(math.log10(x))
    d = round(x / 10**e)
    if d == 10:
        d, e = 1, e + 1
    return d, e
