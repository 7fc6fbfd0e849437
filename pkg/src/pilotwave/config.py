"""INI run configuration with a fixed schema.

Every section and key is declared below; anything else is rejected so a
typo never silently falls back to a default. Overrides use
``section.key=value``. Only the ``[bounds]`` section accepts SI prefixes
and unit tags (``1 fm``, ``1e30 m^-3``).
"""
from __future__ import annotations

import configparser
import hashlib
import json
import re
from importlib import resources
from pathlib import Path


class ConfigError(ValueError):
    pass


def _floats(s: str) -> list[float]:
    return [float(x) for x in re.split(r"[,\s]+", s.strip()) if x]


def _ints(s: str) -> list[int]:
    return [int(x) for x in re.split(r"[,\s]+", s.strip()) if x]


def _optional_float(s: str) -> float | None:
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _choice(*options):
    def parse(s: str) -> str:
        s = s.strip()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s

    return parse


SI_PREFIXES = {
    "Y": 1e24, "Z": 1e21, "E": 1e18, "P": 1e15, "T": 1e12, "G": 1e9, "M": 1e6, "k": 1e3,
    "c": 1e-2, "m": 1e-3, "u": 1e-6, "µ": 1e-6, "n": 1e-9, "p": 1e-12, "f": 1e-15, "a": 1e-18,
}
_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")


def _si(unit: str):
    """Parser for a quantity in ``unit``; a single SI prefix scales the unit's base."""
    base, _, power = unit.partition("^")
    exp = int(power) if power else 1

    def parse(s: str) -> float:
        m = _NUMBER.match(s)
        if not m:
            raise ValueError(f"not a number: {s!r}")
        value, rest = float(m.group(1)), m.group(2)
        if rest in ("", unit):
            return value
        if rest[1:] == unit and rest[0] in SI_PREFIXES:
            return value * SI_PREFIXES[rest[0]] ** exp
        raise ValueError(f"unit {rest!r} does not match {unit!r}")

    return parse


def _si_optional(unit: str):
    inner = _si(unit)
    return lambda s: None if s.strip().lower() in ("", "none") else inner(s)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "grid": {
        "extent": (_floats, [40.0]),
        "points": (_ints, [1024]),
    },
    "packet": {
        "kind": (_choice("gaussian", "double", "coherent"), "gaussian"),
        "center": (_floats, [0.0]),
        "width": (float, 0.5),
        "momentum": (_floats, [0.0]),
        "offset": (float, 2.0),
    },
    "potential": {
        "kind": (_choice("none", "harmonic", "barrier"), "none"),
        "omega": (float, 1.0),
        "center": (float, 0.0),
        "height": (float, 0.0),
        "width": (float, 1.0),
    },
    "run": {
        "times": (_floats, [0.5, 1.0, 2.0]),
        "dt_max": (_optional_float, None),
        "slice_dt": (float, 0.01),
        "tolerance": (float, 1e-8),
    },
    "ensemble": {
        "count": (int, 10_000),
        "seed": (int, 0),
    },
    "equivariance": {
        "alpha": (float, 0.01),
        "velocity_scale": (float, 1.0),
    },
    "spin": {
        "state": (_choice("x-up", "x-down", "z-up", "z-down", "custom"), "x-up"),
        "alpha": (complex, 1.0),
        "beta": (complex, 0.0),
    },
    "coupling": {
        "mu": (float, -1.0),
        "gradient": (float, 16.0),
        "b0": (float, 0.0),
        "t_on": (float, 0.0),
        "t_off": (float, 0.5),
    },
    "classify": {
        "separation": (float, 6.0),
        "stability": (_floats, [4.0, 10.0]),
        "max_time": (float, 10.0),
        "trace_count": (int, 20),
        "trace_dt": (float, 0.05),
    },
    "modes": {
        "n_sites": (int, 32),
        "n_modes": (int, 8),
        "scale": (float, 1.0),
        "mean": (_floats, []),
        "momentum": (_floats, []),
        "squeeze": (_floats, []),
        "times": (_floats, [0.5, 1.0, 2.0]),
        "tolerance": (float, 1e-9),
        "equivariance": (_bool, True),
    },
    "branching": {
        "n_sites": (int, 32),
        "n_modes": (int, 8),
        "pointer_mode": (int, 0),
        "pointer_frequency": (float, 1.0),
        "force": (float, 4.0),
        "weights": (_floats, [0.36, 0.64]),
        "runs": (int, 1000),
        "trace_steps": (int, 40),
        "separation": (float, 8.0),
        "contamination_limit": (float, 1e-6),
    },
    "bounds": {
        "a": (_si("m"), 1e-35),
        "rho": (_si("m^-3"), 1e30),
        "Lambda": (_si("m^-1"), 1e35),
        "L": (_si_optional("m"), None),
        "V": (_si_optional("m^3"), None),
        "margin": (float, 100.0),
    },
}


def preset_names() -> list[str]:
    root = resources.files("pilotwave") / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def read_text(path_or_preset: str) -> str:
    """Text of a config file, or of a shipped preset when no such file exists."""
    p = Path(path_or_preset)
    if p.exists():
        return p.read_text()
    name = path_or_preset[:-4] if path_or_preset.endswith(".ini") else path_or_preset
    if name in preset_names():
        return (resources.files("pilotwave") / "presets" / f"{name}.ini").read_text()
    raise ConfigError(f"no config file or preset named {path_or_preset!r}")


def load(text: str | None = None, overrides: list[str] = ()) -> dict:
    """Resolve defaults, file contents and ``section.key=value`` overrides."""
    raw: dict[str, dict[str, str]] = {}
    if text:
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from exc
        for section in cp.sections():
            raw[section] = dict(cp[section])
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        raw.setdefault(section, {})[name] = value
    out = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    for section, values in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, value in values.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            parser = SCHEMA[section][key][0]
            try:
                out[section][key] = parser(value)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return out


def config_hash(cfg: dict) -> str:
    """SHA-256 of the resolved config, independent of key order."""
    blob = json.dumps(cfg, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
