"""Command-line scenario runner.

Usage::

    pilotwave <command> [--config PATH|PRESET] [--set section.key=value ...]
                        [--seed N] [--out DIR] [--threads N] [--quiet]

Exit status: 0 success, 1 invalid configuration, 2 numerical-quality
failure (norm drift, flagged trajectories, inconclusive run), 3 failed
statistical test.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import adequacy, config, fieldmodes as fm
from .equilibrium import EnsembleSpec, check_equivariance, transport
from .evolution import NumericalQualityError, Potential, energy, record_evolution
from .grids import ComplexGrid, GridError, GridSpec
from .outputs import OutputWriter, now, write_manifest
from .scenarios import BranchingConfig, ScenarioConfig, run_branching_demo, run_stern_gerlach

log = logging.getLogger("pilotwave")

OK, INVALID, NUMERICAL, STATISTICAL = 0, 1, 2, 3


def build_grid(cfg) -> GridSpec:
    return GridSpec(tuple(cfg["grid"]["extent"]), tuple(cfg["grid"]["points"]))


def build_potential(cfg) -> Potential:
    p = cfg["potential"]
    if p["kind"] == "harmonic":
        return Potential.harmonic(p["omega"], p["center"])
    if p["kind"] == "barrier":
        return Potential.barrier(p["height"], p["width"], p["center"])
    return Potential.none()


def build_packet(cfg, spec: GridSpec) -> ComplexGrid:
    p = cfg["packet"]
    c = np.asarray(p["center"], dtype=float)
    k = np.asarray(p["momentum"], dtype=float)
    if len(c) != spec.dim or len(k) != spec.dim:
        raise config.ConfigError("packet center and momentum need one entry per grid axis")
    width = p["width"]
    if p["kind"] == "coherent":
        width = 1 / np.sqrt(2 * cfg["potential"]["omega"])

    def gauss(shift):
        def f(*mesh):
            r2 = sum((x - ci - si) ** 2 for x, ci, si in zip(mesh, c, shift))
            ph = sum(ki * (x - ci) for x, ki, ci in zip(mesh, k, c))
            return np.exp(-r2 / (4 * width**2) + 1j * ph)

        return f

    if p["kind"] == "double":
        off = np.zeros(spec.dim)
        off[0] = p["offset"]
        g = ComplexGrid.from_function(spec, gauss(off)) + ComplexGrid.from_function(spec, gauss(-off))
    else:
        g = ComplexGrid.from_function(spec, gauss(np.zeros(spec.dim)))
    return g.normalized()


def _probe_times(cfg) -> list[float]:
    times = sorted(set(float(t) for t in cfg["run"]["times"]))
    if any(t < 0 for t in times):
        raise config.ConfigError("probe times must be non-negative")
    return times


def _position_columns(dim: int):
    return [("x", "1")] if dim == 1 else [("y", "1"), ("z", "1")]


def cmd_evolve(cfg, out: OutputWriter, args) -> int:
    spec = build_grid(cfg)
    psi = build_packet(cfg, spec)
    V = build_potential(cfg)
    times = np.union1d([0.0], _probe_times(cfg))
    evo = record_evolution(psi, V, times, dt_max=cfg["run"]["dt_max"])
    pos = np.stack([m.ravel() for m in spec.mesh()], axis=1)
    rows = []
    for i, t in enumerate(evo.times):
        v = evo.states[i, 0].ravel()
        rows.append(np.column_stack([np.full(len(v), t), pos, v.real, v.imag, np.abs(v) ** 2]))
    cols = [("t", "1")] + _position_columns(spec.dim) + [("re", "1"), ("im", "1"), ("density", "1")]
    out.write_table("state.dat", cols, np.concatenate(rows))
    report = {
        "times": evo.times,
        "max_norm_drift": evo.max_norm_drift,
        "edge_mass": evo.edge_mass,
        "energy": [energy(evo.state(i), V) for i in range(len(evo))],
        "steps": evo.steps_taken,
        "valid": evo.valid,
        "notes": evo.notes,
    }
    out.write_json("report.json", report)
    _say(args, f"evolved to t={evo.times[-1]:g}; norm drift {evo.max_norm_drift:.2e}")
    return OK if evo.valid and evo.max_norm_drift <= 1e-8 else NUMERICAL


def cmd_trajectories(cfg, out: OutputWriter, args) -> int:
    spec = build_grid(cfg)
    psi = build_packet(cfg, spec)
    times = np.union1d([0.0], _probe_times(cfg))
    ens_spec = EnsembleSpec(cfg["ensemble"]["count"], cfg["ensemble"]["seed"])
    evo, ens = transport(
        psi, build_potential(cfg), ens_spec, times,
        slice_dt=cfg["run"]["slice_dt"], dt_max=cfg["run"]["dt_max"], tol=cfg["run"]["tolerance"],
        workers=args.threads,
    )
    n, T, dim = ens.positions.shape
    ids = np.repeat(np.arange(n), T)
    tt = np.tile(ens.times, n)
    rows = np.column_stack([ids, tt, ens.positions.reshape(-1, dim)])
    out.write_table("trajectories.dat", [("id", "1"), ("t", "1")] + _position_columns(dim), rows)
    report = {
        "count": n,
        "times": ens.times,
        "flagged_fraction": ens.flagged_fraction,
        "max_norm_drift": evo.max_norm_drift,
        "edge_mass": evo.edge_mass,
        "mean_steps": float(np.mean(ens.steps)),
    }
    out.write_json("report.json", report)
    _say(args, f"{n} trajectories, flagged {ens.flagged_fraction:.2%}")
    return OK if ens.flagged_fraction < 0.01 and evo.valid else NUMERICAL


def cmd_equivariance(cfg, out: OutputWriter, args) -> int:
    spec = build_grid(cfg)
    psi = build_packet(cfg, spec)
    ens_spec = EnsembleSpec(cfg["ensemble"]["count"], cfg["ensemble"]["seed"])
    rep = check_equivariance(
        psi, build_potential(cfg), ens_spec, _probe_times(cfg),
        alpha=cfg["equivariance"]["alpha"], velocity_scale=cfg["equivariance"]["velocity_scale"],
        slice_dt=cfg["run"]["slice_dt"], dt_max=cfg["run"]["dt_max"], tol=cfg["run"]["tolerance"],
        workers=args.threads,
    )
    out.write_json("report.json", rep.to_dict())
    _say(args, f"equivariance p-values {['%.3g' % p for p in rep.p_values]} -> {'pass' if rep.ok else 'fail'}")
    if rep.inconclusive:
        return NUMERICAL
    return OK if rep.ok else STATISTICAL


def _mode_vector(values, n, default=0.0):
    if not values:
        return np.full(n, default)
    if len(values) != n:
        raise config.ConfigError(f"mode vectors need {n} entries, got {len(values)}")
    return np.asarray(values, dtype=float)


def cmd_fieldmodes(cfg, out: OutputWriter, args) -> int:
    m = cfg["modes"]
    basis = fm.ModeBasis.lattice(m["n_sites"], m["n_modes"], m["scale"])
    mean = _mode_vector(m["mean"], basis.n_modes)
    mom = _mode_vector(m["momentum"], basis.n_modes)
    squeeze = _mode_vector(m["squeeze"], basis.n_modes, 1.0)
    W = fm.WaveFunctional.coherent(basis, mean, mom, squeeze=squeeze)
    times = np.union1d([0.0], _probe_times({"run": {"times": m["times"]}}))
    status = OK
    report = {"frequencies": basis.frequencies}
    if times[-1] > 0:
        tr = fm.integrate_field(W, mean[None], 0.0, float(times[-1]), m["tolerance"], t_eval=times).trajectory(0)
        w = basis.frequencies
        classical = mean * np.cos(np.outer(times, w)) + mom / w * np.sin(np.outer(times, w))
        report["classical_max_error"] = float(np.max(np.abs(tr.positions - classical)))
        rows = np.column_stack([times, tr.positions])
        out.write_table("modes.dat", [("t", "1")] + [(f"q{k}", "1") for k in range(basis.n_modes)], rows)
        phi = basis.to_field(tr.positions)
        sites = np.arange(basis.n_sites)
        frows = np.column_stack([np.tile(sites, len(times)), np.repeat(times, len(sites)), phi.ravel()])
        out.write_table("field.dat", [("site", "1"), ("t", "1"), ("phi", "1")], frows)
    if m["equivariance"]:
        rep = fm.check_field_equivariance(
            W, cfg["ensemble"]["count"], cfg["ensemble"]["seed"], m["times"],
            alpha=cfg["equivariance"]["alpha"], velocity_scale=cfg["equivariance"]["velocity_scale"],
            tolerance=m["tolerance"], workers=args.threads,
        )
        report["equivariance"] = rep.to_dict()
        status = NUMERICAL if rep.inconclusive else (OK if rep.ok else STATISTICAL)
    out.write_json("report.json", report)
    _say(args, f"field modes: classical error {report.get('classical_max_error', 0.0):.2e}")
    return status


def cmd_bounds(cfg, out: OutputWriter, args) -> int:
    b = cfg["bounds"]
    euler = adequacy.euler_angle_bound(b["a"], b["rho"], candidate=b["L"], margin=b["margin"])
    vol, rad = adequacy.dirac_sea_bound(b["Lambda"], b["rho"], margin=b["margin"])
    if b["V"] is not None:
        vol.candidate = b["V"]
    ratio = adequacy.density_ratio_report(b["rho"], b["Lambda"])
    reports = [r.to_dict() for r in (euler, vol, rad, ratio)]
    out.write_json("report.json", {"bounds": reports})
    for r in reports:
        _say(args, f"{r['bound']}: {r['threshold']:.6g} {r['threshold_unit']}")
    return OK


def scenario_config(cfg, args) -> ScenarioConfig:
    s = cfg["spin"]
    c, cl = cfg["coupling"], cfg["classify"]
    kw = {}
    if s["state"] == "custom":
        kw = {"alpha": s["alpha"], "beta": s["beta"]}
    stab = cl["stability"]
    if len(stab) != 2:
        raise config.ConfigError("[classify] stability needs two numbers")
    return ScenarioConfig(
        spin=s["state"] if s["state"] != "custom" else "x-up",
        extent=tuple(cfg["grid"]["extent"]),
        points=tuple(cfg["grid"]["points"]),
        center=tuple(cfg["packet"]["center"]),
        width=cfg["packet"]["width"],
        momentum=tuple(cfg["packet"]["momentum"]),
        mu=c["mu"], gradient=c["gradient"], b0=c["b0"], t_on=c["t_on"], t_off=c["t_off"],
        count=cfg["ensemble"]["count"], seed=cfg["ensemble"]["seed"],
        separation=cl["separation"], stability=tuple(stab), max_time=cl["max_time"],
        slice_dt=cfg["run"]["slice_dt"], tolerance=cfg["run"]["tolerance"],
        trace_count=cl["trace_count"], trace_dt=cl["trace_dt"], workers=args.threads,
        **kw,
    )


def cmd_sterngerlach(cfg, out: OutputWriter, args) -> int:
    rep = run_stern_gerlach(scenario_config(cfg, args))
    dim = rep.initial.shape[1]
    pcols = _position_columns(dim)
    rows = np.column_stack([np.arange(len(rep.labels)), rep.initial, rep.final, rep.labels])
    cols = [("id", "1")] + [(f"{n}0", u) for n, u in pcols] + [(f"{n}_final", u) for n, u in pcols]
    out.write_table("outcomes.dat", cols + [("branch", "+1 up/-1 down/0 indeterminate")], rows)
    k, T = rep.trace_spin.shape[:2]
    trows = np.column_stack([
        np.repeat(np.arange(k), T), np.tile(rep.trace_times, k),
        rep.trace_positions.reshape(-1, dim), rep.trace_spin.reshape(-1, 3),
    ])
    out.write_table(
        "spin_traces.dat", [("id", "1"), ("t", "1")] + pcols + [("sx", "hbar"), ("sy", "hbar"), ("sz", "hbar")], trows
    )
    summary = rep.summary()
    out.write_json("report.json", summary)
    _say(args, f"up {rep.fractions['up']:.4f} down {rep.fractions['down']:.4f} (Born {rep.born_weights[0]:.4f})")
    if rep.inconclusive or not rep.stable or rep.max_norm_drift > 1e-8 or rep.flagged_fraction >= 0.01:
        return NUMERICAL
    crossing_ok = rep.no_crossing_agreement is None or rep.no_crossing_agreement == 1.0
    return OK if rep.born_ok and crossing_ok else STATISTICAL


def cmd_branching(cfg, out: OutputWriter, args) -> int:
    b = cfg["branching"]
    bc = BranchingConfig(
        n_sites=b["n_sites"], n_modes=b["n_modes"], pointer_mode=b["pointer_mode"],
        pointer_frequency=b["pointer_frequency"], force=b["force"], weights=tuple(b["weights"]),
        runs=b["runs"], seed=cfg["ensemble"]["seed"], trace_steps=b["trace_steps"],
        separation=b["separation"], contamination_limit=b["contamination_limit"], workers=args.threads,
    )
    rep = run_branching_demo(bc)
    sites = np.arange(rep.energy_density.shape[1])
    T = len(rep.times)
    grid_cols = [np.tile(sites, T), np.repeat(rep.times, len(sites))]
    out.write_table(
        "energy_density.dat", [("site", "1"), ("t", "1"), ("E", "1")],
        np.column_stack(grid_cols + [rep.energy_density.ravel()]),
    )
    out.write_table(
        "field_trace.dat", [("site", "1"), ("t", "1"), ("phi", "1")],
        np.column_stack(grid_cols + [rep.field_trace.ravel()]),
    )
    out.write_json("report.json", rep.summary())
    _say(args, f"branch frequencies {rep.frequencies.round(4).tolist()} vs weights {rep.branch_weights.round(4).tolist()}")
    if rep.inconclusive or rep.flagged_fraction >= 0.01:
        return NUMERICAL
    return OK if rep.frequency_ok and rep.worst_contamination < bc.contamination_limit else STATISTICAL


COMMANDS = {
    "evolve": cmd_evolve,
    "trajectories": cmd_trajectories,
    "equivariance": cmd_equivariance,
    "fieldmodes": cmd_fieldmodes,
    "bounds": cmd_bounds,
    "sterngerlach": cmd_sterngerlach,
    "branching": cmd_branching,
}


def _say(args, msg):
    if not args.quiet:
        print(msg)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pilotwave", description="Pilot-wave trajectory and field-mode experiments.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="INI file or shipped preset name")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="out")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s %(message)s")
    started = now()
    try:
        text = config.read_text(args.config) if args.config else None
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"ensemble.seed={args.seed}")
        cfg = config.load(text, overrides)
    except config.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return INVALID
    if args.threads < 1:
        print("config error: --threads must be at least 1", file=sys.stderr)
        return INVALID
    writer = OutputWriter(Path(args.out))
    try:
        status = COMMANDS[args.command](cfg, writer, args)
    except (config.ConfigError, GridError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        status = INVALID
    except NumericalQualityError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        status = NUMERICAL
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        status = INVALID
    write_manifest(
        writer, command=args.command, cfg_hash=config.config_hash(cfg), seed=cfg["ensemble"]["seed"],
        started=started, status=status,
    )
    return status


if __name__ == "__main__":
    sys.exit(main())
