"""Scenario factories.

`build_initial_data` runs the inductive scheme producing initial data whose
kinetic energy density approaches the target at t = 0.  The three gluing
scenarios assemble relaxed base fields on [0, 1] (and their extensions to
later times) with their target energy profiles.  `psystem_lift` turns a
constant-speed incompressible field into a density/velocity pair for the
isentropic p-system.
"""
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.signal import fftconvolve

from .fields import EnergyTarget, Subsolution, unlift_batch
from .grid import BoxUnion, ramp, ramp_sup_norms
from .kinetic import kinetic_integral
from .perturb import StepConfig, _bump_kernel, cell_samples, perturbation_step, sobol_points
from .states import energy_density_batch
from .waves import multi_indices


class SeamMismatch(ValueError):
    pass


class NonMonotonePressure(ValueError):
    pass


# ---------------------------------------------------------------- exhaustion

def exhaustion_margin(omega, k, level=1.0):
    """Inward offset m_k with m_k <= 2^-k diam and level * |omega minus shrink(m_k)| <= 2^-k."""
    target = 2.0 ** -k / level
    m_hi = 2.0 ** -k * omega.diameter()
    lost = lambda m: omega.measure() - omega.shrink(m).measure()
    if lost(m_hi) <= target:
        return m_hi
    lo, hi = 0.0, m_hi
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if lost(mid) <= target:
            lo = mid
        else:
            hi = mid
    return lo


def gradient_l1_bound(sub, t=0.0):
    """Upper bound for int |grad_x v(x, t)| dx summed over atoms (zero base)."""
    n = sub.n
    betas = multi_indices(n + 1, 3)
    total = 0.0
    for L in sub.layers:
        if len(L) == 0:
            continue
        ct = L.centers[:, -1]
        idx = np.nonzero(np.abs(t - ct) < L.h / 2)[0]
        if len(idx) == 0:
            continue
        sup = ramp_sup_norms() / L.h ** np.arange(5)
        K = L.coeffs[idx][:, :, :n, n]
        rt = np.abs(ramp(t - ct[idx], L.h))
        kn = L.N * np.linalg.norm(L.eta[idx, :n], axis=1)
        acc = np.zeros(len(idx))
        for bi, be in enumerate(betas):
            kb = np.linalg.norm(K[:, bi], axis=1) * rt[be[n]]
            sp = np.prod([sup[be[d]] for d in range(n)])
            der = sum(sup[be[d] + 1] * np.prod([sup[be[e]] for e in range(n) if e != d])
                      for d in range(n))
            acc += kb * (kn * sp + der)
        total += L.h ** n * float(acc.sum())
    return total


def _t0_lattice(omega, dx, pad):
    lo, hi = omega.bounds()
    axes = [np.arange(a - pad, b + pad + dx / 2, dx) for a, b in zip(lo, hi)]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([c.ravel() for c in g], axis=1), g[0].shape


def _mollified(f, shape, eta, dx):
    ker = _bump_kernel(eta, dx, len(shape))
    return np.stack([fftconvolve(f[:, c].reshape(shape), ker, mode="same").ravel()
                     for c in range(f.shape[1])], axis=1)


@dataclass
class InitialDataRun:
    omega: BoxUnion
    T: float
    regions: list            # Omega_k, k = 1..budget (+1)
    margins: list
    alphas: list             # alpha_k on Omega_k at iterate v_k
    alpha_errors: list
    subsolutions: list       # v_1 = 0, v_2, ...
    reports: list            # ImprovementReport per step
    etas: list               # mollifier radii eta_k
    mollifier_l1: list       # upper bound for ||v_k - v_k * rho_eta_k||_L1 at t = 0
    weak2: list              # max_j<=k ||(v_k - v_{k+1}) * rho_eta_j||_L2 at t = 0
    gaps: list               # -int_Omega [|v_k(x,0)|^2/2 - level]
    lattice_spacing: float
    resolved: bool
    level: float = 1.0
    log: list = field(default_factory=list)

    @property
    def final(self):
        return self.subsolutions[-1]

    def recursion(self):
        """Per step (alpha_k, alpha_{k+1}, bound, holds) for the recursion inequality."""
        rows = []
        for k, rep in enumerate(self.reports, start=1):
            a, a1 = self.alphas[k - 1], self.alphas[k]
            bound = a - 0.25 * min(a, rep.C * a * a) + 2.0 ** -k
            rows.append({"k": k, "alpha": a, "alpha_next": a1, "bound": bound,
                         "C": rep.C, "holds": bool(a1 <= bound)})
        return rows

    def gap_decreasing(self):
        g = np.asarray(self.gaps)
        return bool(np.all(np.diff(g) < 0))


def build_initial_data(omega, T=0.5, budget=5, seed=0, level=1.0, step_cfg=None,
                       lattice_budget=2 ** 20):
    """Inductive construction of wild initial data on omega x (-T, T).

    Iterate k (starting at 1 with the zero field) is improved on Omega_k at
    t = 0 with alpha = (3/4) alpha_k and a perturbation supported in
    Omega_k x [-2^-k T, 2^-k T].  Mollifier controls are measured on a
    lattice at t = 0 and reported alongside the deficits.
    """
    n = omega.n
    s = Subsolution.zero(omega, (-T, T), EnergyTarget.constant(level))
    subs, reports = [s], []
    regions, margins, alphas, aerrs = [], [], [], []
    etas, moll, weak2, gaps = [], [], [], []
    log = []
    pad = 0.5

    def deficit_on(sub, region):
        kin, err = kinetic_integral(sub, region, 0.0)
        return level * region.measure() - kin, err

    # lattice for the mollifier controls; refined as layers are added
    def lattice_for(sub):
        kmax = 0.0
        for L in sub.layers:
            if len(L):
                kmax = max(kmax, L.N * float(np.abs(L.eta[:, :-1]).max()))
        dx = 2 * np.pi / kmax / 6.0 if kmax > 0 else 0.02
        lo, hi = omega.bounds()
        cnt = np.prod((hi - lo + 2 * pad) / dx + 1)
        ok = cnt <= lattice_budget
        if not ok:
            dx = float(np.max(hi - lo + 2 * pad)) / (lattice_budget ** (1.0 / n) - 1)
        return dx, ok

    def choose_eta(sub, k):
        # ||f - f * rho_eta||_L1 <= eta ||grad f||_L1 for a kernel supported in B_eta
        tol = 2.0 ** -k
        B = gradient_l1_bound(sub, 0.0)
        eta = 0.5 * tol
        while eta * B >= tol:
            eta *= 0.5
        return eta, eta * B

    for k in range(1, budget + 2):
        m = exhaustion_margin(omega, k, level)
        region = omega.shrink(m)
        regions.append(region)
        margins.append(m)
        a, ae = deficit_on(s, region)
        alphas.append(a)
        aerrs.append(ae)
        g, _ = deficit_on(s, omega)
        gaps.append(g)
        if k == budget + 1:
            break
        eps = 2.0 ** -k * T
        cfg = replace(step_cfg or StepConfig(halve_on_size=False, max_halvings=2),
                      times=(0.0,), t_window=(-eps, eps), active_only=True)
        s_new, rep = perturbation_step(s, eps, region, 0.75 * a, seed=seed + k, cfg=cfg)
        reports.append(rep)
        log.append({"k": k, "eps": eps, "margin": m, "alpha": a, "h": rep.h, "N": rep.N,
                    "atoms": rep.atoms, "beta": rep.beta_achieved, "C": rep.C})
        subs.append(s_new)
        s = s_new

    # mollifier controls at t = 0, measured on the finest lattice
    dx, resolved = lattice_for(s)
    x, shape = _t0_lattice(omega, dx, pad)
    vals = np.zeros((len(x), n))
    prev = None
    for k, sub in enumerate(subs, start=1):
        if k > 1:
            L = sub.layers[-1]
            for c in range(0, len(x), 65536):
                vals[c:c + 65536] += L.lifted(x[c:c + 65536], 0.0)[:, :n, n]
        eta, err = choose_eta(sub, k)
        etas.append(eta)
        moll.append(err)
        if prev is not None:
            diff = vals - prev
            worst = 0.0
            for eta_j in etas[:-1]:
                if eta_j < 2 * dx:
                    continue
                md = _mollified(diff, shape, eta_j, dx)
                inside = omega.contains(x)
                worst = max(worst, float(np.sqrt(np.sum(md[inside] ** 2) * dx ** n)))
            weak2.append(worst)
        prev = vals.copy()
    return InitialDataRun(omega, T, regions, margins, alphas, aerrs, subs, reports, etas, moll,
                          weak2, gaps, float(dx), bool(resolved), float(level), log)


# ---------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class Piece:
    start: float
    stop: float
    source: Optional[Subsolution]   # None is the zero field
    shift: float = 0.0              # source time = t - shift


def _zero_lifted(n, x):
    return np.zeros((len(x), n + 1, n + 1))


@dataclass
class EhatProfile:
    times: np.ndarray
    tilde: np.ndarray     # e~ on the lattice
    running: np.ndarray   # max over the lattice tail, one index early

    def __call__(self, t):
        t = np.asarray(t, float)
        m = np.interp(t, self.times, self.running)
        return (1.0 - t) + t * m

    def tilde_at(self, t):
        return np.interp(np.asarray(t, float), self.times, self.tilde)


@dataclass
class ScenarioField:
    label: str
    omega: BoxUnion
    pieces: tuple
    ebar: EnergyTarget
    target_energy: Callable
    seams: tuple
    period: Optional[tuple] = None   # (start, length): t >= start maps into [start, start+length)
    tail: Optional[float] = None     # zero beyond this time when not periodic
    ehat: Optional[EhatProfile] = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.omega.n

    def local_time(self, t):
        t = np.asarray(t, float)
        if self.period is not None:
            a, p = self.period
            k = np.floor((t - a) / p)
            t = np.where(t >= a + p, t - k * p, t)
        return t

    def piece_index(self, t):
        t = self.local_time(t)
        idx = np.full(np.shape(t), -1)
        for j, pc in enumerate(self.pieces):
            last = j == len(self.pieces) - 1
            sel = (t >= pc.start) & ((t <= pc.stop) if last else (t < pc.stop)) & (idx < 0)
            idx = np.where(sel, j, idx)
        return idx

    def lifted(self, x, t):
        x = np.atleast_2d(np.asarray(x, float))
        t = np.broadcast_to(np.asarray(t, float), x.shape[:1])
        tl = self.local_time(t)
        j = self.piece_index(t)
        out = _zero_lifted(self.n, x)
        for k, pc in enumerate(self.pieces):
            sel = np.nonzero(j == k)[0]
            if len(sel) and pc.source is not None:
                out[sel] = pc.source.lifted(x[sel], tl[sel] - pc.shift)
        return out

    def evaluate(self, x, t):
        return unlift_batch(self.lifted(x, t))

    def velocity(self, x, t):
        return self.evaluate(x, t)[0]

    def energy(self, x, t):
        v, u, _ = self.evaluate(x, t)
        return energy_density_batch(v, u)

    def segments(self, t0, t1):
        """Pieces met by [t0, t1] as (a, b, source, shift) in global time."""
        out = []
        if self.period is None:
            for pc in self.pieces:
                a, b = max(t0, pc.start), min(t1, pc.stop)
                if b > a:
                    out.append((a, b, pc.source, pc.shift))
            return out
        a0, p = self.period
        for pc in self.pieces:
            if pc.stop <= a0:
                a, b = max(t0, pc.start), min(t1, pc.stop)
                if b > a:
                    out.append((a, b, pc.source, pc.shift))
        k0 = int(np.floor((t0 - a0) / p)) if t0 > a0 else 0
        k1 = int(np.ceil((t1 - a0) / p))
        for k in range(k0, k1 + 1):
            for pc in self.pieces:
                if pc.stop <= a0:
                    continue
                a, b = max(t0, pc.start + k * p), min(t1, pc.stop + k * p)
                if b > a:
                    out.append((a, b, pc.source, pc.shift + k * p))
        return out

    def seam_mismatch(self, x):
        """Max entrywise jump of the lifted field across every seam at points x."""
        x = np.atleast_2d(np.asarray(x, float))
        worst = 0.0
        for ts in self.seams:
            left = right = None
            for pc in self.pieces:
                if abs(pc.stop - ts) < 1e-12:
                    left = pc
                if abs(pc.start - ts) < 1e-12:
                    right = pc
            if left is None or right is None:
                continue
            a = _zero_lifted(self.n, x) if left.source is None else left.source.lifted(x, ts - left.shift)
            b = _zero_lifted(self.n, x) if right.source is None else right.source.lifted(x, ts - right.shift)
            worst = max(worst, float(np.abs(a - b).max()) if len(x) else 0.0)
        return worst


def _initial_field(omega, seed, budget, level):
    run = build_initial_data(omega, 0.5, budget, seed, level)
    return run.final, run


def _level_of(vbar):
    prof = vbar.ebar.profile
    return float(prof(np.asarray(0.0))) if prof is not None else 1.0


def scenario_a(omega, seed=0, vbar=None, budget=2, level=1.0):
    """Time-reflected base: vbar(t) on [0, 1/2], vbar(t - 1) on [1/2, 1], period 1."""
    if vbar is None:
        vbar, _ = _initial_field(omega, seed, budget, level)
    level = _level_of(vbar)
    vol = omega.measure()
    pieces = (Piece(0.0, 0.5, vbar, 0.0), Piece(0.5, 1.0, vbar, 1.0))
    f = ScenarioField("a", omega, pieces, EnergyTarget.constant(level),
                      lambda t: np.full(np.shape(t), level * vol), (0.5,), period=(0.0, 1.0),
                      meta={"level": level})
    _check_seams(f)
    return f


def _sample_x(omega, count, seed):
    lo, hi = omega.bounds()
    x = sobol_points(lo, hi, 2 * count, seed)
    return x[omega.contains(x)][:count]


def _check_seams(f, count=512, seed=0):
    x = _sample_x(f.omega, count, seed)
    gap = f.seam_mismatch(x)
    if gap > 1e-12:
        raise SeamMismatch(f"scenario {f.label}: seam mismatch {gap:.3g}")


def ehat_profile(field_, omega, times=None, count=4096, seed=0, per_cell=4):
    """e~(t) = max over sampled x of e(v0, u0), e~(0) = 1; e^ from its running tail max."""
    times = np.linspace(0.0, 1.0, 201) if times is None else np.asarray(times, float)
    x = _sample_x(omega, count, seed)
    rng = np.random.default_rng(seed)
    extra = []
    for pc in field_.pieces:
        if pc.source is None:
            continue
        for L in pc.source.layers:
            y, _ = cell_samples(L, rng, per_cell)
            extra.append(y[:, :-1])
            extra.append(L.centers[:, :-1])
    if extra:
        x = np.concatenate([x] + extra)
    tilde = np.zeros(len(times))
    attained = np.zeros(len(times))
    for k, t in enumerate(times):
        e = field_.energy(x, np.full(len(x), t))
        attained[k] = float(e.max()) / field_.meta.get("level", 1.0)
        tilde[k] = 1.0 if t == 0.0 else attained[k]
    # the max over [t, 1] for t > 0 sees the attained values, not the convention at t = 0
    tail = np.maximum.accumulate(attained[::-1])[::-1]
    running = np.concatenate([[tail[0]], tail[:-1]])
    running = np.maximum(running, tail)
    return EhatProfile(times, tilde, running)


def scenario_b(omega, seed=0, vbar=None, budget=2, level=1.0):
    """vbar on [0, 1/2], zero on [1/2, 1] and after; target density e^(t) level."""
    if vbar is None:
        vbar, _ = _initial_field(omega, seed, budget, level)
    level = _level_of(vbar)
    vol = omega.measure()
    pieces = (Piece(0.0, 0.5, vbar, 0.0), Piece(0.5, 1.0, None, 0.0))
    f = ScenarioField("b", omega, pieces, EnergyTarget.constant(level), None, (0.5,),
                      tail=1.0, meta={"level": level})
    _check_seams(f)
    eh = ehat_profile(f, omega, seed=seed)
    f.ehat = eh
    f.ebar = EnergyTarget.from_profile(lambda t: level * np.where(np.asarray(t) <= 1.0,
                                                                  eh(np.clip(t, 0.0, 1.0)), 0.0))
    f.target_energy = lambda t: level * vol * np.where(np.asarray(t, float) <= 1.0,
                                                       eh(np.clip(t, 0.0, 1.0)), 0.0)
    return f


def _integer_mask(t):
    t = np.asarray(t, float)
    return (np.abs(t - np.rint(t)) < 1e-12) & (t >= 1.0 - 1e-12)


def scenario_c(omega, seed=0, vbar=None, v2=None, budget=2, level=1.0):
    """(b)-style base on [0, 1], then v2(t - k) on [k, k+1] for k >= 1."""
    if vbar is None:
        vbar, _ = _initial_field(omega, seed, budget, level)
    level = _level_of(vbar)
    vol = omega.measure()
    if v2 is None:
        v2 = Subsolution.zero(omega, (0.0, 1.0), EnergyTarget.constant(level))
    pieces = (Piece(0.0, 0.5, vbar, 0.0), Piece(0.5, 1.0, None, 0.0), Piece(1.0, 2.0, v2, 1.0))
    f = ScenarioField("c", omega, pieces, EnergyTarget.constant(level),
                      lambda t: level * vol * np.where(_integer_mask(t), 0.0, 1.0),
                      (0.5, 1.0), period=(1.0, 1.0), meta={"level": level})
    x = _sample_x(omega, 512, seed)
    for tb in (0.0, 1.0):
        d = np.abs(v2.lifted(x, tb)).max() if len(x) else 0.0
        if d > 1e-12:
            raise SeamMismatch(f"second field is not zero at t = {tb}: {d:.3g}")
    _check_seams(f)
    return f


# ---------------------------------------------------------------- p-system

@dataclass
class PSystemState:
    omega: BoxUnion
    velocity_field: object       # Subsolution or ScenarioField
    p_law: Callable
    alpha_p: float
    beta_p: float
    gamma: float
    eps1: float                  # internal energy at density 1
    n: int
    rho_region: Optional[BoxUnion] = None   # where rho = 1; omega unless overridden

    @property
    def density_region(self):
        return self.omega if self.rho_region is None else self.rho_region

    def rho(self, x):
        return np.where(self.density_region.contains(np.atleast_2d(x), closed=True), 1.0, 2.0)

    def pressure(self, x):
        return np.asarray(self.p_law(self.rho(x)), float)

    def p_tilde(self, x):
        return np.where(self.omega.contains(np.atleast_2d(x), closed=True), -self.gamma, 0.0)

    def p_hat(self, x):
        return self.p_tilde(x) + self.beta_p

    def internal_energy(self, r):
        r = np.atleast_1d(np.asarray(r, float))
        out = [self.eps1 + integrate.quad(lambda s: float(self.p_law(s)) / s ** 2, 1.0, float(ri))[0]
               for ri in r]
        return np.array(out)

    @property
    def speed2(self):
        """Relaxed |v|^2 on Omega."""
        return self.n * self.gamma

    @property
    def flux_constant(self):
        """rho eps(rho) + rho |v|^2/2 + p(rho) on Omega."""
        return self.eps1 + 0.5 * self.speed2 + self.alpha_p

    def entropy_density(self, x):
        """rho eps(rho) + rho |v|^2/2 with the relaxed speed."""
        rho = self.rho(x)
        inside = rho == 1.0
        e2 = float(2.0 * self.internal_energy(2.0)[0])
        return np.where(inside, self.eps1 + 0.5 * self.speed2, e2)

    def entropy_flux_coefficient(self, x):
        rho = self.rho(x)
        inside = rho == 1.0
        e2 = float(2.0 * self.internal_energy(2.0)[0]) + self.beta_p
        return np.where(inside, self.flux_constant, e2)


def psystem_lift(v, p_law, omega, eps1=None, samples=257):
    """Density 1 on omega and 2 outside; shifted pressure alpha_p / beta_p.

    The velocity field should have relaxed level n gamma / 2, i.e. it was
    built with that constant target density.
    """
    r = np.linspace(0.9, 2.1, samples)
    dp = np.gradient(np.asarray(p_law(r), float), r)
    if np.any(dp <= 0):
        raise NonMonotonePressure(f"p' <= 0 near rho = {r[np.argmin(dp)]:.4g}")
    a, b = float(p_law(1.0)), float(p_law(2.0))
    gamma = b - a
    n = omega.n
    if isinstance(v, ScenarioField):
        level = v.meta.get("level")
    else:
        level = _level_of(v) if v.ebar.profile is not None else None
    if level is not None and abs(level - 0.5 * n * gamma) > 1e-12 * max(1.0, level):
        raise ValueError(f"velocity level {level} differs from n gamma / 2 = {0.5 * n * gamma}")
    return PSystemState(omega, v, p_law, a, b, gamma, a if eps1 is None else float(eps1), n)
