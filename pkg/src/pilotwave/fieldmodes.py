"""Field-configuration pilot-wave dynamics in a truncated set of bosonic modes.

A scalar field on an N-site periodic lattice is expanded in M real normal
modes ``q_k`` with frequencies ``omega_k = scale * 2 |sin(pi kappa / N)|``.
The wave functional is a finite superposition of product Gaussians::

    G(q) = exp(-sum_k A_k (q_k - m_k)^2 + i sum_k p_k (q_k - m_k) + i gamma)

each carrying a vector of complex amplitudes over a discrete label ``f``
(the fermionic index). Every mode is a harmonic oscillator, so Gaussians
propagate in closed form. A label coupling ``K + q_j G`` (``K``, ``G``
Hermitian and commuting) is diagonal in a joint eigenbasis ("channels");
in channel ``n`` it adds an energy ``K_nn`` and a linear force ``g_n q_j``,
which only displaces the oscillator centre, so the family stays closed.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .evolution import NumericalQualityError

DENSITY_FLOOR = 1e-24


@dataclass(frozen=True, eq=False)
class ModeBasis:
    n_sites: int
    frequencies: np.ndarray
    wavenumbers: np.ndarray
    vectors: np.ndarray  # (n_sites, n_modes), orthonormal columns

    @classmethod
    def lattice(cls, n_sites: int = 32, n_modes: int = 8, scale: float = 1.0) -> "ModeBasis":
        """Lowest ``n_modes`` real Fourier modes (cos/sin pairs), skipping the zero mode."""
        if n_modes < 1 or n_modes > n_sites - 2:
            raise ValueError(f"need 1 <= n_modes <= n_sites - 2, got {n_modes} for {n_sites} sites")
        sites = np.arange(n_sites)
        kappas, cols = [], []
        for j in range(n_modes):
            kappa = j // 2 + 1
            arg = 2 * np.pi * kappa * sites / n_sites
            cols.append(np.sqrt(2.0 / n_sites) * (np.cos(arg) if j % 2 == 0 else np.sin(arg)))
            kappas.append(kappa)
        kappas = np.array(kappas)
        if np.any(2 * kappas >= n_sites):
            raise ValueError("too many modes for the lattice")
        freqs = scale * 2 * np.abs(np.sin(np.pi * kappas / n_sites))
        return cls(n_sites, freqs, kappas, np.stack(cols, axis=1))

    @property
    def n_modes(self) -> int:
        return len(self.frequencies)

    def to_field(self, q: np.ndarray) -> np.ndarray:
        return np.asarray(q) @ self.vectors.T

    def from_field(self, phi: np.ndarray) -> np.ndarray:
        return np.asarray(phi) @ self.vectors


@dataclass(frozen=True, eq=False)
class GaussianTerm:
    mean: np.ndarray
    momentum: np.ndarray
    width: np.ndarray  # complex A_k, Re > 0
    phase: complex = 0j
    labels: np.ndarray = field(default_factory=lambda: np.ones(1, dtype=complex))

    def __post_init__(self):
        for name, dtype in (("mean", float), ("momentum", float), ("width", complex), ("labels", complex)):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=dtype)))
        if not (self.mean.shape == self.momentum.shape == self.width.shape):
            raise ValueError("mean, momentum and width need one entry per mode")
        if np.any(self.width.real <= 0):
            raise ValueError("Gaussian widths need a positive real part")
        object.__setattr__(self, "phase", complex(self.phase))


@dataclass(frozen=True, eq=False)
class LabelCoupling:
    """``H_label = static + q[mode] * modulation`` on the label index."""

    static: np.ndarray
    modulation: np.ndarray | None = None
    mode: int = 0

    def __post_init__(self):
        k = np.atleast_2d(np.asarray(self.static, dtype=complex))
        g = np.zeros_like(k) if self.modulation is None else np.atleast_2d(np.asarray(self.modulation, dtype=complex))
        for name, mat in (("static", k), ("modulation", g)):
            if mat.shape[0] != mat.shape[1] or not np.allclose(mat, mat.conj().T, atol=1e-12):
                raise ValueError(f"{name} coupling must be a square self-adjoint matrix")
        if k.shape != g.shape:
            raise ValueError("static and modulation matrices must match")
        object.__setattr__(self, "static", k)
        object.__setattr__(self, "modulation", g)

    @property
    def size(self) -> int:
        return self.static.shape[0]

    def channels(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Joint eigenbasis ``U`` (columns), channel energies and forces."""
        k, g = self.static, self.modulation
        scale = 1.0 + np.linalg.norm(k) * np.linalg.norm(g)
        if np.linalg.norm(k @ g - g @ k) > 1e-10 * scale:
            raise ValueError("static and modulated couplings must commute for closed-form evolution")
        gvals, gvecs = np.linalg.eigh(g)
        u = np.zeros_like(gvecs)
        start = 0
        while start < len(gvals):
            stop = start + 1
            while stop < len(gvals) and abs(gvals[stop] - gvals[start]) <= 1e-10 * (1 + abs(gvals[start])):
                stop += 1
            block = gvecs[:, start:stop]
            _, kv = np.linalg.eigh(block.conj().T @ k @ block)
            u[:, start:stop] = block @ kv
            start = stop
        energies = np.real(np.einsum("fn,fg,gn->n", u.conj(), k, u))
        forces = np.real(np.einsum("fn,fg,gn->n", u.conj(), g, u))
        return u, energies, forces


@dataclass(frozen=True, eq=False)
class _Stack:
    """Terms stacked along a leading axis, each tied to one coupling channel."""

    mean: np.ndarray  # (T, M)
    momentum: np.ndarray
    width: np.ndarray
    phase: np.ndarray  # (T,)
    labels: np.ndarray  # (T, F)
    center: np.ndarray  # (T, M) oscillator centre in the term's channel
    rate: np.ndarray  # (T,) constant energy offset of the channel


@dataclass(frozen=True, eq=False)
class WaveFunctional:
    basis: ModeBasis
    terms: tuple[GaussianTerm, ...]
    coupling: LabelCoupling | None = None
    time: float = 0.0

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ValueError("a wave functional needs at least one term")
        m = self.basis.n_modes
        f = len(terms[0].labels)
        for t in terms:
            if len(t.mean) != m:
                raise ValueError(f"term has {len(t.mean)} modes, basis has {m}")
            if len(t.labels) != f:
                raise ValueError("all terms need the same number of labels")
        if self.coupling is not None and self.coupling.size != f:
            raise ValueError("coupling size does not match the label count")
        if self.coupling is not None and not 0 <= self.coupling.mode < m:
            raise ValueError("coupling mode index out of range")
        object.__setattr__(self, "terms", terms)

    @property
    def n_labels(self) -> int:
        return len(self.terms[0].labels)

    # construction helpers

    @classmethod
    def ground_state(cls, basis: ModeBasis, labels=None, coupling=None) -> "WaveFunctional":
        return cls.coherent(basis, np.zeros(basis.n_modes), np.zeros(basis.n_modes), labels, coupling=coupling)

    @classmethod
    def coherent(cls, basis, mean, momentum, labels=None, squeeze=None, coupling=None) -> "WaveFunctional":
        """Displaced ground state; ``squeeze`` multiplies the widths ``omega/2``."""
        mean = np.asarray(mean, dtype=float)
        momentum = np.asarray(momentum, dtype=float)
        width = basis.frequencies / 2 + 0j
        if squeeze is not None:
            width = width * np.asarray(squeeze, dtype=complex)
        labels = np.ones(1) if labels is None else np.asarray(labels, dtype=complex)
        term = GaussianTerm(mean, momentum, width, 0j, labels / np.linalg.norm(labels))
        return cls(basis, (_normalize_term(term),), coupling)

    def with_terms(self, terms, time=None) -> "WaveFunctional":
        return replace(self, terms=tuple(terms), time=self.time if time is None else time)

    # closed-form integrals

    def overlap_matrix(self) -> np.ndarray:
        s = _stack_plain(self)
        return _overlaps(s, s)

    def norm(self) -> float:
        """``sum_f integral |Psi_f|^2`` in closed form."""
        s = _stack_plain(self)
        ov = _overlaps(s, s)
        lab = s.labels.conj() @ s.labels.T
        return float(np.real(np.sum(lab * ov)))

    def normalized(self) -> "WaveFunctional":
        c = 1 / np.sqrt(self.norm())
        return self.with_terms([replace(t, labels=t.labels * c) for t in self.terms])

    def branch_weights(self) -> np.ndarray:
        """Probability in each coupling channel (labels when uncoupled)."""
        u = _channel_basis(self)[0]
        s = _stack_plain(self)
        ov = _overlaps(s, s)
        proj = s.labels @ u.conj()  # (T, channels)
        return np.real(np.einsum("an,bn,ab->n", proj.conj(), proj, ov))


def _normalize_term(term: GaussianTerm) -> GaussianTerm:
    a = term.width.real
    log_norm = np.sum(0.5 * np.log(np.pi / (2 * a))) - 2 * term.phase.imag
    labels = term.labels * np.exp(-0.5 * log_norm) / np.linalg.norm(term.labels)
    return replace(term, labels=labels)


def _stack_plain(w: WaveFunctional) -> _Stack:
    t = w.terms
    m = w.basis.n_modes
    return _Stack(
        np.stack([x.mean for x in t]),
        np.stack([x.momentum for x in t]),
        np.stack([x.width for x in t]),
        np.array([x.phase for x in t]),
        np.stack([x.labels for x in t]),
        np.zeros((len(t), m)),
        np.zeros(len(t)),
    )


def _overlaps(a: _Stack, b: _Stack) -> np.ndarray:
    """``integral conj(G_a) G_b dq`` for every pair, label vectors excluded."""
    aa = a.width.conj()[:, None, :]
    ab = b.width[None, :, :]
    ma, mb = a.mean[:, None, :], b.mean[None, :, :]
    pa, pb = a.momentum[:, None, :], b.momentum[None, :, :]
    c = aa + ab
    lin = 2 * aa * ma + 2 * ab * mb - 1j * pa + 1j * pb
    const = -aa * ma**2 - ab * mb**2 + 1j * pa * ma - 1j * pb * mb
    log_i = np.sum(0.5 * np.log(np.pi / c) + lin**2 / (4 * c) + const, axis=-1)
    log_i = log_i - 1j * a.phase.conj()[:, None] + 1j * b.phase[None, :]
    return np.exp(log_i)


def _channel_basis(w: WaveFunctional):
    f = w.n_labels
    if w.coupling is None:
        return np.eye(f, dtype=complex), np.zeros(f), np.zeros(f)
    return w.coupling.channels()


def _channel_stack(w: WaveFunctional) -> _Stack:
    """Split every term into its coupling-channel pieces."""
    u, energies, forces = _channel_basis(w)
    omega = w.basis.frequencies
    mode = 0 if w.coupling is None else w.coupling.mode
    rows = {k: [] for k in ("mean", "momentum", "width", "phase", "labels", "center", "rate")}
    for t in w.terms:
        coeffs = u.conj().T @ t.labels
        scale = np.linalg.norm(t.labels)
        for n, c in enumerate(coeffs):
            if abs(c) <= 1e-15 * scale:
                continue
            center = np.zeros(w.basis.n_modes)
            center[mode] = -forces[n] / omega[mode] ** 2
            lab = c * u[:, n] if np.count_nonzero(np.abs(coeffs) > 1e-15 * scale) > 1 else t.labels
            rows["mean"].append(t.mean)
            rows["momentum"].append(t.momentum)
            rows["width"].append(t.width)
            rows["phase"].append(t.phase)
            rows["labels"].append(lab)
            rows["center"].append(center)
            rows["rate"].append(energies[n] - forces[n] ** 2 / (2 * omega[mode] ** 2))
    return _Stack(*(np.array(rows[k]) for k in ("mean", "momentum", "width", "phase", "labels", "center", "rate")))


def _propagate(s: _Stack, omega: np.ndarray, tau) -> _Stack:
    """Exact propagation of stacked terms by ``tau`` (scalar or ``(n,)``).

    Returns arrays shaped ``(T, n, M)`` / ``(T, n)`` (``n = 1`` for scalar tau).
    Modes that sit exactly in their oscillator ground state are only phased,
    which keeps real widths and zero momenta bit-exact.
    """
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    T = s.mean.shape[0]
    tt = tau[None, :, None]
    w = omega[None, None, :]
    mp = (s.mean - s.center)[:, None, :]
    p0 = s.momentum[:, None, :]
    a0 = s.width[:, None, :]
    still = (mp == 0) & (p0 == 0) & (a0 == w / 2)

    theta = w * tt
    cos, sin = np.cos(theta), np.sin(theta)
    half = np.floor(theta / np.pi)
    red = theta - half * np.pi
    cr, sr = np.cos(red), np.sin(red)
    c = 2 * a0 / w
    q_red = cr + 1j * c * sr
    log_q = np.log(q_red) + 1j * np.pi * half
    width = -0.5j * w * (-sr + 1j * c * cr) / q_red
    mean_p = mp * cos + p0 / w * sin
    mom = p0 * cos - mp * w * sin
    dphase = 0.5j * log_q + 0.5 * (mom * mean_p - p0 * mp)

    width = np.where(still, a0, width)
    mean_p = np.where(still, mp, mean_p)
    mom = np.where(still, p0, mom)
    dphase = np.where(still, -0.5 * w * tt, dphase)

    n = len(tau)
    phase = s.phase[:, None] + np.sum(dphase, axis=-1) - s.rate[:, None] * tau[None, :]
    return _Stack(
        mean_p + s.center[:, None, :],
        np.broadcast_to(mom, (T, n, s.mean.shape[1])),
        np.broadcast_to(width, (T, n, s.mean.shape[1])),
        phase,
        s.labels,
        s.center,
        s.rate,
    )


def evolve_functional(W: WaveFunctional, dt: float, steps: int, *, history: bool = False, norm_tol: float = 1e-10):
    """Advance ``W`` by ``steps * dt`` (closed form; ``steps`` only sets snapshots).

    Returns the final functional, or every snapshot when ``history`` is set.
    Terms come back split into coupling channels.
    """
    if int(steps) != steps or steps < 0:
        raise ValueError("steps must be a non-negative integer")
    norm0 = W.norm()
    if abs(norm0 - 1.0) > 1e-8:
        raise ValueError(f"wave functional must be normalized, got {norm0:.12g}")
    base = _channel_stack(W)
    taus = dt * np.arange(1, int(steps) + 1)
    snaps = [W]
    for tau in taus:
        prop = _propagate(base, W.basis.frequencies, tau)
        terms = [
            GaussianTerm(prop.mean[i, 0], prop.momentum[i, 0], prop.width[i, 0], prop.phase[i, 0], prop.labels[i])
            for i in range(len(prop.labels))
        ]
        snap = W.with_terms(terms, time=W.time + tau)
        drift = abs(snap.norm() - norm0)
        if drift > norm_tol:
            raise NumericalQualityError(f"functional norm drifted by {drift:.3e}")
        snaps.append(snap)
    return snaps if history else snaps[-1]


class FunctionalField:
    """Guidance field of a wave functional at arbitrary per-particle times."""

    breakpoints = ()

    def __init__(self, W: WaveFunctional, scale: float = 1.0):
        self.W = W
        self.base = _channel_stack(W)
        self.omega = W.basis.frequencies
        self.scale = scale

    def state(self, t, q):
        """Per-term log amplitudes ``(T, n)`` and their gradients ``(T, n, M)``."""
        tau = np.asarray(t, dtype=float) - self.W.time
        tau = np.broadcast_to(tau, (len(q),))
        prop = _propagate(self.base, self.omega, tau)
        d = q[None] - prop.mean
        log_g = np.sum(-prop.width * d * d + 1j * prop.momentum * d, axis=-1) + 1j * prop.phase
        grad = -2 * prop.width * d + 1j * prop.momentum
        return log_g, grad, prop.labels

    def components(self, t, q):
        """Label amplitudes ``(n, F)``, gradients ``(n, F, M)`` and log scale ``(n,)``."""
        log_g, grad, labels = self.state(t, q)
        shift = np.max(log_g.real, axis=0)
        g = np.exp(log_g - shift[None])
        psi = np.einsum("tf,tn->nf", labels, g)
        dpsi = np.einsum("tf,tn,tnm->nfm", labels, g, grad)
        bound = np.einsum("t,tn->n", np.sum(np.abs(labels) ** 2, axis=1), np.abs(g) ** 2)
        return psi, dpsi, shift, bound

    def evaluate(self, t, q, form: str = "labeled"):
        q = np.asarray(q, dtype=float)
        if len(self.base.labels) == 1:
            # one Gaussian: labels cancel and the phase gradient is affine in q
            log_g, grad, labels = self.state(t, q)
            v = grad[0].imag
            dens = np.exp(2 * log_g[0].real) * np.sum(np.abs(labels[0]) ** 2)
            return v * self.scale, dens
        psi, dpsi, shift, bound = self.components(t, q)
        dens = np.sum(np.abs(psi) ** 2, axis=1)
        if form == "phase":
            if psi.shape[1] != 1:
                raise ValueError("the phase-gradient form needs a single label")
            with np.errstate(invalid="ignore", divide="ignore"):
                v = np.imag(dpsi[:, 0, :] / psi[:, 0, None])
        else:
            num = np.imag(np.einsum("nf,nfm->nm", psi.conj(), dpsi))
            with np.errstate(invalid="ignore", divide="ignore"):
                v = num / dens[:, None]
        v[dens <= DENSITY_FLOOR * bound] = np.nan
        return v * self.scale, dens * np.exp(2 * shift)

    def __call__(self, t, q):
        return self.evaluate(t, q)[0]


def field_velocity(W: WaveFunctional, q, *, form: str = "labeled") -> np.ndarray:
    """Mode velocities ``Im sum_f Psi_f* dPsi_f / sum_f |Psi_f|^2`` at ``q``.

    ``form="phase"`` uses ``Im(dPsi/Psi)`` (the phase gradient) and needs a
    single label. NaN marks configurations where the density vanishes.
    """
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    q2 = q.reshape(-1, W.basis.n_modes)
    fld = FunctionalField(W)
    if form == "phase" or form == "labeled-general":
        psi, dpsi, shift, bound = fld.components(W.time, q2)
        dens = np.sum(np.abs(psi) ** 2, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            if form == "phase":
                if psi.shape[1] != 1:
                    raise ValueError("the phase-gradient form needs a single label")
                v = np.imag(dpsi[:, 0, :] / psi[:, 0, None])
            else:
                v = np.imag(np.einsum("nf,nfm->nm", psi.conj(), dpsi)) / dens[:, None]
        v[dens <= DENSITY_FLOOR * bound] = np.nan
    else:
        v = fld.evaluate(W.time, q2)[0]
    return v[0] if single else v


def amplitudes(W: WaveFunctional, q, t: float | None = None) -> np.ndarray:
    """Label amplitudes ``Psi_f(q)``, shape ``(n, F)`` (or ``(F,)`` for one point)."""
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    q2 = q.reshape(-1, W.basis.n_modes)
    psi, _, shift, _ = FunctionalField(W).components(W.time if t is None else t, q2)
    out = psi * np.exp(shift)[:, None]
    return out[0] if single else out


def sample_functional(W: WaveFunctional, count: int, seed: int) -> np.ndarray:
    """Exact draws from ``sum_f |Psi_f|^2`` by rejection from the term mixture.

    Proposal density ``sum_a |c_a|^2 |G_a|^2``; by Cauchy-Schwarz the target
    is at most ``T`` times that, which fixes the acceptance probability.
    """
    rng = np.random.default_rng(seed)
    s = _stack_plain(W)
    T, M = s.mean.shape
    lab2 = np.sum(np.abs(s.labels) ** 2, axis=1)
    var = 1 / (4 * s.width.real)
    log_mass = np.sum(0.5 * np.log(np.pi / (2 * s.width.real)), axis=1) - 2 * s.phase.imag
    log_w = np.log(lab2) + log_mass
    probs = np.exp(log_w - log_w.max())
    probs /= probs.sum()
    fld = FunctionalField(replace(W, coupling=None))
    out, have = [], 0
    while have < count:
        batch = max(count - have, 256) if T > 1 else count - have
        which = rng.choice(T, size=batch, p=probs) if T > 1 else np.zeros(batch, dtype=int)
        q = s.mean[which] + rng.standard_normal((batch, M)) * np.sqrt(var[which])
        if T == 1:
            out.append(q)
            have += batch
            continue
        psi, _, shift, bound = fld.components(W.time, q)
        target = np.sum(np.abs(psi) ** 2, axis=1)
        accept = rng.random(batch) * T * bound <= target
        out.append(q[accept])
        have += int(accept.sum())
    return np.concatenate(out)[:count]


def marginal_moments(W: WaveFunctional) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of each mode under ``|Psi|^2`` for a single-term functional."""
    if len(W.terms) != 1:
        raise ValueError("closed-form marginals need a single Gaussian term")
    t = W.terms[0]
    return t.mean.copy(), 1 / (4 * t.width.real)


def integrate_field(W: WaveFunctional, q0, t0: float, t1: float, tolerance: float = 1e-9, **kw):
    """Transport field configurations ``q0`` (``(n, M)``) from ``t0`` to ``t1``."""
    from .guidance import integrate_ensemble

    return integrate_ensemble(FunctionalField(W), np.atleast_2d(q0), t0, t1, tol=tolerance, **kw)


def check_self_adjoint(emat: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    emat = np.asarray(emat, dtype=complex)
    if emat.ndim != 3 or emat.shape[1] != emat.shape[2]:
        raise ValueError("energy operator must have shape (sites, F, F)")
    scale = max(1.0, float(np.max(np.abs(emat))))
    if np.max(np.abs(emat - np.conj(np.swapaxes(emat, 1, 2)))) > tol * scale:
        raise ValueError("energy-density operator must be self-adjoint at every site")
    return emat


def energy_density(W: WaveFunctional, q, emat: np.ndarray, t: float | None = None) -> np.ndarray:
    """Conditional energy density ``Psi^dag E(x) Psi / Psi^dag Psi`` at configuration ``q``.

    ``emat`` has shape ``(sites, F, F)``. Returns ``(sites,)`` or
    ``(n, sites)`` for a batch of configurations.
    """
    emat = check_self_adjoint(emat)
    if emat.shape[1] != W.n_labels:
        raise ValueError("operator label dimension does not match the functional")
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    q2 = q.reshape(-1, W.basis.n_modes)
    psi, _, _, bound = FunctionalField(W).components(W.time if t is None else t, q2)
    dens = np.sum(np.abs(psi) ** 2, axis=1)
    if np.any(dens <= DENSITY_FLOOR * bound):
        raise ValueError("functional density vanishes at the configuration")
    raw = np.einsum("nf,xfg,ng->nx", psi.conj(), emat, psi) / dens[:, None]
    if np.max(np.abs(raw.imag)) > 1e-10 * max(1.0, float(np.max(np.abs(raw.real)))):
        raise NumericalQualityError("energy density acquired an imaginary part")
    out = raw.real
    return out[0] if single else out


def channel_weights_at(W: WaveFunctional, q, t: float | None = None) -> np.ndarray:
    """Share of the local density ``sum_f |Psi_f(q)|^2`` in each coupling channel."""
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    q2 = q.reshape(-1, W.basis.n_modes)
    u = _channel_basis(W)[0]
    psi, *_ = FunctionalField(W).components(W.time if t is None else t, q2)
    proj = np.abs(psi @ u.conj()) ** 2
    out = proj / proj.sum(axis=1, keepdims=True)
    return out[0] if single else out


def diagonal_profile(n_sites: int, levels) -> np.ndarray:
    """``E_ff(x) = levels[f]`` at every site, no off-diagonal elements."""
    levels = np.asarray(levels, dtype=float)
    emat = np.zeros((n_sites, len(levels), len(levels)), dtype=complex)
    emat[:, np.arange(len(levels)), np.arange(len(levels))] = levels
    return emat


def single_site_profile(n_sites: int, sites, amplitude: float = 1.0) -> np.ndarray:
    """Label ``f`` deposits ``amplitude`` on lattice site ``sites[f]`` only."""
    emat = np.zeros((n_sites, len(sites), len(sites)), dtype=complex)
    for f, s in enumerate(sites):
        emat[s, f, f] = amplitude
    return emat


def two_packet_profile(n_sites: int, centers=(None, None), width: float = 2.0, amplitude: float = 1.0) -> np.ndarray:
    """Two labels, each a periodic Gaussian bump of energy on the lattice."""
    c = [n_sites / 4 if centers[0] is None else centers[0], 3 * n_sites / 4 if centers[1] is None else centers[1]]
    x = np.arange(n_sites)
    emat = np.zeros((n_sites, 2, 2), dtype=complex)
    for f in range(2):
        d = (x - c[f] + n_sites / 2) % n_sites - n_sites / 2
        emat[:, f, f] = amplitude * np.exp(-0.5 * (d / width) ** 2)
    return emat


def branch_profile(emat: np.ndarray, u_col: np.ndarray) -> np.ndarray:
    """Energy density of a single normalized label vector."""
    u_col = np.asarray(u_col, dtype=complex)
    return np.real(np.einsum("f,xfg,g->x", u_col.conj(), emat, u_col)) / np.real(np.vdot(u_col, u_col))


def check_field_equivariance(
    W: WaveFunctional,
    count: int,
    seed: int,
    times,
    *,
    alpha: float = 0.01,
    velocity_scale: float = 1.0,
    tolerance: float = 1e-9,
    workers: int = 1,
    max_flagged_fraction: float = 0.01,
):
    """KS-test every mode marginal of a transported ``|Psi|^2`` ensemble.

    Needs a functional that stays a single Gaussian term, whose marginals are
    normal in closed form. The significance is split over modes and times.
    """
    from scipy import stats

    from .equilibrium import EquivarianceReport

    if len(_channel_stack(W).labels) != 1:
        raise ValueError("closed-form marginals need a functional that stays one Gaussian term")
    times = [float(t) for t in times]
    q0 = sample_functional(W, count, seed)
    m = W.basis.n_modes
    per = alpha / (len(times) * m)
    fld = FunctionalField(W, scale=velocity_scale)
    later = [t for t in times if t > W.time]
    if later:
        from .guidance import integrate_ensemble

        t_eval = sorted(set([W.time] + later))
        ens = integrate_ensemble(fld, q0, W.time, t_eval[-1], t_eval=t_eval, tol=tolerance, workers=workers)
        flagged = ens.flagged
    else:
        ens, t_eval, flagged = None, [W.time], np.zeros(count, dtype=bool)
    statistics, p_values, passed = [], [], []
    for t in times:
        q = q0 if ens is None or t <= W.time else ens.at(t_eval.index(t))[~flagged]
        snap = W if t <= W.time else evolve_functional(W, t - W.time, 1)
        mean, var = marginal_moments(snap)
        res = [stats.kstest(q[:, k], "norm", args=(mean[k], np.sqrt(var[k]))) for k in range(m)]
        statistics.append(float(max(r.statistic for r in res)))
        p_values.append(float(min(r.pvalue for r in res)))
        passed.append(p_values[-1] >= per)
    report = EquivarianceReport(
        times, statistics, p_values, passed, alpha, per, "ks-mode-marginals", count, seed,
        int(flagged.sum()), velocity_scale,
    )
    if report.flagged_fraction > max_flagged_fraction:
        report.inconclusive = True
        report.notes.append(f"flagged fraction {report.flagged_fraction:.3%}")
    return report
