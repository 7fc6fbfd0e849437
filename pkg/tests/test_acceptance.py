"""One check per acceptance criterion; each records a PASS/FAIL line for the terminal summary."""
import os

import numpy as np
import pytest
import sympy as sp

import conftest
from pilotwave import adequacy as ad
from pilotwave import config
from pilotwave import fieldmodes as fm
from pilotwave.cli import build_grid, build_packet, build_potential, _probe_times
from pilotwave.equilibrium import EnsembleSpec, check_equivariance, continuity_residual
from pilotwave.evolution import Potential, record_evolution
from pilotwave.grids import ComplexGrid, GridSpec
from pilotwave.guidance import SliceVelocityField, integrate_trajectory
from pilotwave.scenarios import BranchingConfig, ScenarioConfig, run_branching_demo, run_stern_gerlach

WORKERS = os.cpu_count() or 1


def record(n, checks):
    """``checks``: list of (description, ok)."""
    ok = all(c for _, c in checks)
    detail = "; ".join(f"{d} [{'ok' if c else 'FAIL'}]" for d, c in checks)
    conftest.ACCEPTANCE_LINES.append(f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def sg_runs():
    return {
        "x-up": run_stern_gerlach(ScenarioConfig(spin="x-up", count=10_000, workers=WORKERS)),
        "z-up": run_stern_gerlach(ScenarioConfig(spin="z-up", count=10_000, workers=WORKERS)),
        "general": run_stern_gerlach(
            ScenarioConfig(alpha=np.sqrt(0.3), beta=1j * np.sqrt(0.7), count=10_000, workers=WORKERS)
        ),
    }


def test_criterion_1_euler_angle_numbers():
    planck = ad.euler_angle_bound(1e-35, 1e30).threshold
    nuclear = ad.euler_angle_bound(1e-15, 1e30).threshold
    record(1, [
        (f"L*(1e-35 m) = {planck:.3g} m", ad.leading_digit(planck) == (1, 15)),
        (f"L*(1e-15 m) = {nuclear:.3g} m", ad.leading_digit(nuclear) == (1, -5)),
    ])


def test_criterion_2_dirac_sea_numbers():
    _, rad = ad.dirac_sea_bound(1e35, 1e30)
    b = rad.threshold
    ratio_minus_one = ad.density_ratio(1e30, 1e35) - 1
    excess = ad.density_ratio_excess(1e30, 1e35)
    record(2, [
        (f"radius {b:.3g} m vs 1e-6 m (factor {b / 1e-6:.3g})", 0.5e-6 <= b <= 2e-6),
        (f"ratio - 1 = {ratio_minus_one:.3g} (excess {excess:.3g})", ratio_minus_one < 1e-70 and excess < 1e-70),
    ])


@pytest.mark.parametrize("preset", ["equivariance_free", "equivariance_double", "equivariance_coherent"])
def test_criterion_3_equivariance(preset):
    cfg = config.load(config.read_text(preset))
    spec = build_grid(cfg)
    psi = build_packet(cfg, spec)
    V = build_potential(cfg)
    times = _probe_times(cfg)
    ens = EnsembleSpec(10_000, cfg["ensemble"]["seed"])
    good = check_equivariance(psi, V, ens, times, alpha=0.01, workers=WORKERS)
    bad = check_equivariance(psi, V, ens, times, alpha=0.01, velocity_scale=1.1, workers=WORKERS)
    record(3, [
        (f"{preset} p={[round(p, 3) for p in good.p_values]} at alpha/3", good.ok and len(times) == 3),
        (f"x1.1 control min p={min(bad.p_values):.2g}", not bad.ok),
    ])


def test_criterion_4_trajectory_oracles():
    spec = GridSpec.line(40.0, 1024)
    x = spec.axis(0)
    s0 = 0.5
    t1 = 4 * s0**2
    psi = ComplexGrid(spec, np.exp(-(x**2) / (4 * s0**2))).normalized()
    evo = record_evolution(psi, Potential.none(), np.linspace(0, t1, 401))
    fld = SliceVelocityField(evo)
    ts = np.linspace(0, t1, 21)
    worst = 0.0
    for x0 in (1e-3, 0.2, -0.5, 1.0, -1.5):
        tr = integrate_trajectory(fld, [x0], 0.0, t1, 1e-10, t_eval=ts)
        exact = x0 * np.sqrt(1 + (ts / (2 * s0**2)) ** 2)
        worst = max(worst, float(np.max(np.abs(tr.positions[:, 0] - exact) / abs(exact))))

    pspec = GridSpec.line(2 * np.pi, 64)
    px = pspec.axis(0)
    plane = ComplexGrid(pspec, np.exp(2j * px)).normalized()
    pevo = record_evolution(plane, Potential.none(), np.linspace(0, 1.0, 11))
    ptr = integrate_trajectory(SliceVelocityField(pevo), [0.1], 0.0, 1.0, 1e-10, wrap=pspec)
    plane_err = abs(pspec.wrap(np.array([2.1]))[0] - ptr.positions[-1, 0])

    hspec = GridSpec.line(20.0, 256)
    hx = hspec.axis(0)
    ground = ComplexGrid(hspec, np.exp(-(hx**2) / 2)).normalized()
    hevo = record_evolution(ground, Potential.harmonic(1.0), np.linspace(0, 2.0, 21), dt_max=1e-4)
    htr = integrate_trajectory(SliceVelocityField(hevo), [0.8], 0.0, 2.0, 1e-10)
    stat_err = abs(htr.positions[-1, 0] - 0.8)
    record(4, [
        (f"free Gaussian rel err {worst:.2g}", worst < 1e-3),
        (f"plane wave err {plane_err:.2g}", plane_err < 1e-6),
        (f"stationary err {stat_err:.2g}", stat_err < 1e-8),
    ])


def test_criterion_5_stern_gerlach(sg_runs):
    x, z, g = sg_runs["x-up"], sg_runs["z-up"], sg_runs["general"]
    up = x.fractions["up"]
    crossing = [r.no_crossing_agreement for r in (x, z, g)]
    record(5, [
        (f"x-up fractions {up:.4f}/{x.fractions['down']:.4f}", abs(up - 0.5) <= 0.02 and x.fractions["indeterminate"] == 0),
        (f"z-up up fraction {z.fractions['up']}", z.fractions["up"] == 1.0),
        (f"general up {g.fractions['up']:.4f} vs {g.born_weights[0]:.4f} (se {g.standard_error:.4f})", g.born_ok),
        (f"no-crossing agreement {crossing} (median split {x.median_agreement:.4f})", all(c == 1.0 for c in crossing)),
        (f"fractions stable over 4-10 widths (labels switched {[r.label_changes for r in (x, z, g)]})",
         all(r.stable and not r.inconclusive for r in (x, z, g))),
    ])


def test_criterion_6_numerical_hygiene(sg_runs):
    drifts = {name: r.max_norm_drift for name, r in sg_runs.items()}
    flagged = {name: r.flagged_fraction for name, r in sg_runs.items()}
    for preset in ("evolve_free", "equivariance_double", "equivariance_coherent"):
        cfg = config.load(config.read_text(preset))
        spec = build_grid(cfg)
        evo = record_evolution(build_packet(cfg, spec), build_potential(cfg), [0.0] + _probe_times(cfg))
        drifts[preset] = evo.max_norm_drift
    W = fm.WaveFunctional.coherent(
        fm.ModeBasis.lattice(32, 8, 5.0), np.linspace(-1, 1, 8), np.linspace(1, -1, 8), squeeze=np.linspace(0.5, 2, 8)
    )
    drifts["fieldmodes"] = max(abs(h.norm() - 1) for h in fm.evolve_functional(W, 0.002, 1000, history=True))

    spec = GridSpec.line(20.0, 512)
    xx = spec.axis(0)
    psi = ComplexGrid(spec, np.exp(-((xx - 1) ** 2) / 2 + 0.5j * xx)).normalized()
    V = Potential.custom(0.5 * xx**2 + 0.1 * xx**4 / (1 + 0.01 * xx**4))
    norms = []
    for d in (0.02, 0.01, 0.005):
        times = np.linspace(0, 0.4, int(round(0.4 / d)) + 1)
        r = continuity_residual(record_evolution(psi, V, times, dt_max=d))
        norms.append(r.l2_norm[np.argmin(np.abs(r.times - 0.2))])
    orders = np.log2(np.array(norms[:-1]) / np.array(norms[1:]))
    record(6, [
        (f"max norm drift {max(drifts.values()):.2g}", max(drifts.values()) <= 1e-8),
        (f"residual orders {np.round(orders, 3).tolist()}", bool(np.all(np.abs(orders - 2) < 0.1))),
        (f"max flagged fraction {max(flagged.values()):.2g}", max(flagged.values()) < 0.01),
    ])


def test_criterion_7_field_modes():
    # labeled velocity of a single-label Gaussian against the gradient of its phase
    ar, ai, m, p, gr, gi, q, cr, ci = sp.symbols("a_r a_i m p g_r g_i q c_r c_i", real=True)
    psi = (cr + sp.I * ci) * sp.exp(-(ar + sp.I * ai) * (q - m) ** 2 + sp.I * p * (q - m) + sp.I * (gr + sp.I * gi))
    labeled = sp.im(sp.expand_complex(sp.conjugate(psi) * sp.diff(psi, q))) / sp.expand_complex(sp.conjugate(psi) * psi)
    phase = sp.atan2(sp.im(sp.expand_complex(psi)), sp.re(sp.expand_complex(psi)))
    identity = sp.simplify(labeled - sp.diff(phase, q)) == 0

    basis = fm.ModeBasis.lattice(32, 8)
    g = fm.WaveFunctional.ground_state(basis)
    q0 = fm.sample_functional(g, 500, 0)
    ens = fm.integrate_field(g, q0, 0.0, 5.0, t_eval=[0.0, 2.5, 5.0])
    static = bool(np.all(ens.positions == q0[:, None, :]))

    rng = np.random.default_rng(1)
    c = fm.WaveFunctional.coherent(basis, rng.normal(size=8), rng.normal(size=8))
    m0, p0, w = c.terms[0].mean, c.terms[0].momentum, basis.frequencies
    ts = np.linspace(0, 20.0, 41)
    tr = fm.integrate_field(c, m0[None], 0.0, 20.0, 1e-9, t_eval=ts).trajectory(0)
    classical = m0 * np.cos(np.outer(ts, w)) + p0 / w * np.sin(np.outer(ts, w))
    cerr = float(np.max(np.abs(tr.positions - classical)))

    cfg = config.load(config.read_text("fieldmodes_coherent"))
    md = cfg["modes"]
    mb = fm.ModeBasis.lattice(md["n_sites"], md["n_modes"], md["scale"])
    W = fm.WaveFunctional.coherent(mb, np.array(md["mean"]), np.array(md["momentum"]), squeeze=np.array(md["squeeze"]))
    good = fm.check_field_equivariance(W, 10_000, cfg["ensemble"]["seed"], md["times"], workers=WORKERS)
    bad = fm.check_field_equivariance(W, 10_000, cfg["ensemble"]["seed"], md["times"], velocity_scale=1.1, workers=WORKERS)

    br = run_branching_demo(BranchingConfig(runs=1000, seed=0, workers=WORKERS))
    fdev = abs(br.frequencies[0] - br.branch_weights[0])
    record(7, [
        ("labeled form equals phase gradient at F = 1", identity),
        ("ground-state configuration static", static),
        (f"coherent classical err {cerr:.2g}", cerr < 1e-7),
        (f"mode equivariance min p={min(good.p_values):.3g}, x1.1 min p={min(bad.p_values):.2g}", good.ok and not bad.ok),
        (f"branch contamination {br.worst_contamination:.2g}", br.worst_contamination < 1e-6),
        (f"frequencies {np.round(br.frequencies, 3).tolist()} vs {np.round(br.branch_weights, 3).tolist()} "
         f"({fdev / br.standard_error:.2g} se)", br.frequency_ok and not br.inconclusive),
    ])
