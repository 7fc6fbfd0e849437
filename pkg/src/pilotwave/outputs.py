"""Deterministic file outputs: columnar tables, JSON reports and the run manifest."""
from __future__ import annotations

import hashlib
import json
import math
import os
import platform
import tempfile
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def to_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float written to 17 significant digits (NaN/inf become null)."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        return "[\n" + ",\n".join(pad + to_json(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, complex):
        return to_json([obj.real, obj.imag], indent, _level)
    return json.dumps(str(obj))


def table(columns: list[tuple[str, str]], rows: np.ndarray) -> str:
    """Whitespace-separated columns; the header names each column with its unit."""
    head = "# " + " ".join(f"{name}[{unit}]" for name, unit in columns)
    rows = np.atleast_2d(rows)
    lines = [head]
    for r in rows:
        lines.append(" ".join(fmt(v) for v in r))
    return "\n".join(lines) + "\n"


def atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class OutputWriter:
    """Funnels every file write through one lock and records checksums."""

    root: Path
    files: dict[str, str] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def write(self, name: str, text: str) -> Path:
        path = self.root / name
        with self._lock:
            atomic_write(path, text)
            self.files[name] = hashlib.sha256(text.encode()).hexdigest()
        return path

    def write_json(self, name: str, obj) -> Path:
        return self.write(name, to_json(obj) + "\n")

    def write_table(self, name: str, columns, rows) -> Path:
        return self.write(name, table(columns, rows))


def module_versions() -> dict[str, str]:
    import scipy

    from . import __version__

    return {
        "pilotwave": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(writer: OutputWriter, *, command: str, cfg_hash: str, seed, started: str, status: int):
    from . import __version__

    manifest = {
        "tool_version": __version__,
        "command": command,
        "config_hash": cfg_hash,
        "seed": seed,
        "started": started,
        "finished": now(),
        "exit_status": status,
        "module_versions": module_versions(),
        "outputs": [{"file": k, "sha256": v} for k, v in sorted(writer.files.items())],
    }
    writer.write("manifest.json", to_json(manifest) + "\n")
