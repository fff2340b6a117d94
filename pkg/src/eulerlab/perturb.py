"""Subsolution functionals, the weak metric and the perturbation step.

The step follows the classical three-stage argument: freeze a deficit on a
parity-shifted grid, attach one admissible segment per cell, then add one
localized plane wave per cell at a common frequency N large enough that
the strict energy bound survives and the averaged energy gain is realized.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.signal import fftconvolve
from scipy.stats import qmc

from .fields import AtomLayer, EnergyTarget, Subsolution, lift_batch, unlift_batch
from .grid import EDGE, PLATEAU, BoxUnion, GridPrecondition, ShiftedGrid, build_grid
from .hull import DecompositionFailed, PointNotInterior, segments_batch
from .kinetic import asymptotic_gain, kinetic_integral
from .states import energy_density_batch
from .waves import fd_divergence

MAX_FREQUENCY = 2 ** 16


class PreconditionDeficit(ValueError):
    pass


class CellSegmentFailure(RuntimeError):
    pass


class FrequencyBudgetExceeded(RuntimeError):
    pass


# ---------------------------------------------------------------- functional

def time_lattice(s, eps, h=None):
    """Sample times for the infimum: spacing h/8 plus all cell-boundary times."""
    t0, t1 = s.horizon
    a, b = t0 + eps, t1 - eps
    hs = [L.h for L in s.layers if len(L)]
    if h is not None:
        hs.append(h)
    if not hs:
        return np.linspace(a, b, 65)
    hf = min(hs)
    ts = [np.arange(a, b + 1e-12, hf / 8.0), [a, b]]
    for hh in set(hs):
        k0 = int(np.ceil(2 * a / hh - 1e-9))
        k1 = int(np.floor(2 * b / hh + 1e-9))
        ts.append(np.arange(k0, k1 + 1) * hh / 2.0)
    t = np.unique(np.round(np.concatenate(ts), 12))
    return t[(t >= a - 1e-12) & (t <= b + 1e-12)]


@dataclass
class FunctionalReport:
    value: float
    error: float
    argmin: float
    times: np.ndarray
    values: np.ndarray
    errors: np.ndarray


def functional_profile(s, omega0, times):
    """t -> int_{omega0} [|v|^2/2 - ebar] with per-time error bars."""
    vals = np.zeros(len(times))
    errs = np.zeros(len(times))
    for k, t in enumerate(times):
        kin, ek = kinetic_integral(s, omega0, float(t))
        eb, ee = s.ebar.integral(omega0, float(t))
        vals[k] = kin - eb
        errs[k] = ek + ee
    return vals, errs


def functional_report(s, eps, omega0, times=None):
    if not (0.0 < eps < s.T / 2.0):
        raise ValueError("need 0 < eps < T/2")
    times = time_lattice(s, eps) if times is None else np.atleast_1d(np.asarray(times, float))
    vals, errs = functional_profile(s, omega0, times)
    k = int(np.argmin(vals))
    return FunctionalReport(float(vals[k]), float(errs.max()), float(times[k]), times, vals, errs)


def I_functional(s, eps, omega0, times=None):
    """inf over the time lattice in [eps, T-eps] of int_{omega0} [|v|^2/2 - ebar]."""
    return functional_report(s, eps, omega0, times).value


# ---------------------------------------------------------------- weak metric

@dataclass(frozen=True)
class WeakMetricConfig:
    radii: tuple = (0.4, 0.2, 0.1, 0.05)
    times: Optional[tuple] = None     # default: 9 equispaced times in the horizon
    spacing: Optional[float] = None   # lattice spacing; default resolves radii and waves
    budget: int = 2 ** 20             # max lattice points per time
    pad: float = 1.0

    def __post_init__(self):
        r = np.asarray(self.radii, float)
        if len(r) == 0 or np.any(r <= 0) or np.any(np.diff(r) >= 0):
            raise ValueError("radii must be positive and strictly decreasing")

    def weights(self):
        return 2.0 ** -np.arange(1, len(self.radii) + 1)


def _bump_kernel(radius, dx, n):
    k = int(np.ceil(radius / dx))
    ax = np.arange(-k, k + 1) * dx
    g = np.meshgrid(*([ax] * n), indexing="ij")
    r2 = sum(x * x for x in g) / radius ** 2
    ker = np.where(r2 < 1, np.exp(-1.0 / np.maximum(1e-300, 1.0 - r2)), 0.0)
    return ker / ker.sum()


@dataclass
class WeakDistance:
    value: float
    per_time: np.ndarray
    times: np.ndarray
    spacing: float
    resolved: bool


def weak_distance(s1, s2, cfg=None, detail=False):
    """max_t sum_j 2^-j min(1, ||(v1 - v2)(., t) * rho_j||_L2)."""
    cfg = WeakMetricConfig() if cfg is None else cfg
    n = s1.n
    t0, t1 = s1.horizon
    times = np.linspace(t0, t1, 9) if cfg.times is None else np.asarray(cfg.times, float)
    lo, hi = s1.omega.bounds()
    lo2, hi2 = s2.omega.bounds()
    lo = np.minimum(lo, lo2)
    hi = np.maximum(hi, hi2)
    kmax = 0.0
    for L in tuple(s1.layers) + tuple(s2.layers):
        if len(L):
            kmax = max(kmax, L.N * float(np.abs(L.eta[:, :-1]).max()))
    want = cfg.radii[-1] / 4.0
    if kmax > 0:
        want = min(want, 2 * np.pi / kmax / 4.0)
    dx = want if cfg.spacing is None else cfg.spacing
    span = hi - lo
    count = float(np.prod(np.ceil(span / dx) + 1))
    resolved = True
    if count > cfg.budget:
        dx = float(np.max(span)) / (cfg.budget ** (1.0 / n) - 1)
        resolved = False
    axes = [np.arange(a, b + dx / 2, dx) for a, b in zip(lo, hi)]
    g = np.meshgrid(*axes, indexing="ij")
    x = np.stack([c.ravel() for c in g], axis=1)
    shape = g[0].shape
    kernels = [_bump_kernel(r, dx, n) for r in cfg.radii]
    w = cfg.weights()
    per_t = np.zeros(len(times))
    for k, t in enumerate(times):
        d = s1.velocity(x, t) - s2.velocity(x, t)
        tot = 0.0
        for j, ker in enumerate(kernels):
            acc = 0.0
            for c in range(n):
                f = fftconvolve(d[:, c].reshape(shape), ker, mode="full")
                acc += float(np.sum(f * f)) * dx ** n
            tot += w[j] * min(1.0, np.sqrt(acc))
        per_t[k] = tot
    out = WeakDistance(float(per_t.max()), per_t, times, dx, resolved)
    return out if detail else out.value


# ---------------------------------------------------------------- membership

@dataclass(frozen=True)
class SamplePlan:
    count: int = 4096         # quasi-random points in Omega x window
    per_cell: int = 0         # extra random points inside every atom cell
    outside: int = 512        # points outside Omega for the support check
    seed: int = 0
    window: Optional[tuple] = None


@dataclass
class MembershipReport:
    margin: float
    worst: np.ndarray
    samples: int
    violations: int
    support_violation: float
    linear_residual: float
    boundary_error: float

    @property
    def ok(self):
        return self.margin > 0 and self.support_violation == 0.0


def sobol_points(lo, hi, count, seed):
    d = len(lo)
    m = int(np.ceil(np.log2(max(2, count))))
    pts = qmc.Sobol(d, scramble=True, seed=seed).random_base2(m)[:count]
    return lo + pts * (hi - lo)


def cell_samples(layer, rng, per_cell, shell=0.5):
    """Random points in each atom cell; about `shell` of coordinates fall on the ramps."""
    if len(layer) == 0 or per_cell <= 0:
        return np.zeros((0, layer.n + 1)), np.zeros(0, int)
    m = layer.n + 1
    c = np.repeat(layer.centers, per_cell, axis=0)
    owner = np.repeat(np.arange(len(layer)), per_cell)
    u = rng.random((len(c), m))
    on_ramp = rng.random((len(c), m)) < shell
    sign = np.where(rng.random((len(c), m)) < 0.5, -1.0, 1.0)
    r = sign * (PLATEAU + (EDGE - PLATEAU) * u) * layer.h
    p = (u - 0.5) * layer.h
    y = c + np.where(on_ramp, r, p)
    y = np.clip(y, c - EDGE * layer.h * (1 - 1e-9), c + EDGE * layer.h * (1 - 1e-9))
    return y, owner


def x0_membership(s, plan=None):
    plan = SamplePlan() if plan is None else plan
    n = s.n
    rng = np.random.default_rng(plan.seed)
    t0, t1 = s.horizon if plan.window is None else plan.window
    lo, hi = s.omega.bounds()
    pts = []
    got = 0
    draw = 0
    while got < plan.count and draw < 8:
        y = sobol_points(np.append(lo, t0), np.append(hi, t1), 2 * plan.count, plan.seed + draw)
        y = y[s.omega.contains(y[:, :n]) & (y[:, n] > t0) & (y[:, n] < t1)]
        pts.append(y[:plan.count - got])
        got += len(pts[-1])
        draw += 1
    for L in s.layers:
        y, _ = cell_samples(L, rng, plan.per_cell)
        pts.append(y)
    y = np.concatenate(pts) if pts else np.zeros((0, n + 1))
    margin, worst, bad = np.inf, np.full(n + 1, np.nan), 0
    for k in range(0, len(y), 65536):
        yy = y[k:k + 65536]
        e = s.energy(yy[:, :n], yy[:, n])
        gap = s.ebar(yy[:, :n], yy[:, n]) - e
        bad += int(np.sum(gap <= 0))
        j = int(np.argmin(gap))
        if gap[j] < margin:
            margin, worst = float(gap[j]), yy[j].copy()
    # support: points outside Omega in a band around its bounding box
    pad = 0.1 * (hi - lo)
    yo = rng.uniform(np.append(lo - pad, t0), np.append(hi + pad, t1), (4 * plan.outside, n + 1))
    yo = yo[~s.omega.contains(yo[:, :n], closed=True)][:plan.outside]
    sup = 0.0
    if len(yo):
        U = s.lifted(yo[:, :n], yo[:, n]) - s.base_lifted(yo[:, :n], yo[:, n])
        mag = np.abs(U).reshape(len(yo), -1).max(axis=1)
        if np.any(mag > 1e-12):
            dist = _distance_outside(s.omega, yo[mag > 1e-12, :n])
            sup = float(dist.max())
    # linear residual of the base (atoms are exact)
    lin = 0.0
    if s.base is not None and len(y):
        yb = y[:min(len(y), 2048)]
        f = lambda p: s.base_lifted(p[:, :n], p[:, n])
        lin = float(np.abs(fd_divergence(f, yb, 1e-5)).max())
    # boundary-time agreement with the base
    xb = sobol_points(lo, hi, 1024, plan.seed + 99)
    xb = xb[s.omega.contains(xb)]
    bnd = 0.0
    for tb in (t0, t1):
        d = s.lifted(xb, tb) - s.base_lifted(xb, tb)
        bnd = max(bnd, float(np.abs(d).max()) if len(d) else 0.0)
    return MembershipReport(margin, worst, len(y), bad, sup, lin, bnd)


def _distance_outside(omega, x):
    d = np.full(len(x), np.inf)
    for blo, bhi in omega.boxes:
        gap = np.maximum(np.maximum(blo - x, x - bhi), 0.0)
        d = np.minimum(d, np.linalg.norm(gap, axis=1))
    return d


# ---------------------------------------------------------------- perturbation step

@dataclass(frozen=True)
class StepConfig:
    h0: Optional[float] = None        # initial cell size (default 0.8 eps/2)
    max_halvings: int = 3
    c_needed: Optional[float] = None  # acceptance level for int|E_h| >= c alpha
    cell_samples: int = 12            # points per cell for the segment-size test
    member_samples: int = 24          # points per cell for the membership test
    n_start: int = 16
    n_max: int = MAX_FREQUENCY
    gain_fraction: float = 0.8
    shrink_floor: float = 2.0 ** -10
    min_spread: float = 0.05
    times: Optional[tuple] = None     # objective times (default: lattice)
    t_window: Optional[tuple] = None  # cell window (default [eps/2, T-eps/2])
    active_only: bool = False         # keep cells whose slab contains an objective time
    halve_on_size: bool = True        # halve h when the segment-size test fails


@dataclass
class ImprovementReport:
    alpha: float
    beta_predicted: float
    beta_achieved: float
    beta_error: float
    slack: float
    C: float
    c_needed: float
    c_size: float
    c_length: float
    M: float
    h: float
    N: int
    cell_N: np.ndarray
    quad_error: float
    I_before: float
    I_after: float
    I_asymptotic: float
    gain_asymptotic: float
    atoms: int
    shrunk: int
    dropped: int
    halvings: int
    margin: float
    log: list = field(default_factory=list)

    @property
    def holds(self):
        return self.beta_achieved >= self.beta_predicted - self.slack

    def row(self):
        return {k: getattr(self, k) for k in (
            "alpha", "beta_predicted", "beta_achieved", "beta_error", "slack", "C", "c_needed",
            "c_size", "c_length", "M", "h", "N", "quad_error", "I_before", "I_after",
            "I_asymptotic", "gain_asymptotic", "atoms", "shrunk", "dropped", "halvings", "margin")}


def _max_ebar(s, omega0, w0, w1, seed):
    if s.ebar.profile is not None:
        t = np.linspace(w0, w1, 2001)
        return float(np.max(s.ebar.profile(t)))
    lo, hi = omega0.bounds()
    y = sobol_points(np.append(lo, w0), np.append(hi, w1), 8192, seed)
    y = y[omega0.contains(y[:, :-1], closed=True)]
    return float(np.max(s.ebar(y[:, :-1], y[:, -1])))


def _subgrid(g, keep):
    return ShiftedGrid(g.h, g.n, g.omega0, g.window, g.zeta[keep], g.tidx[keep], g.odd[keep], g.spatial)


def _cell_points(g, rng, k):
    """Anchor, centre and k random points per cell, flattened with owner ids."""
    c = g.centers
    pts = [g.anchors, c]
    u = (rng.random((len(c), k, c.shape[1])) - 0.5) * g.h * (1 - 1e-9)
    pts.append((c[:, None, :] + u).reshape(-1, c.shape[1]))
    owner = np.concatenate([np.arange(len(c)), np.arange(len(c)), np.repeat(np.arange(len(c)), k)])
    return np.concatenate(pts), owner


def _fits(s, y, owner, vbar, ubar, scale):
    """Per-point test e(z +- scale*zbar) < ebar."""
    n = s.n
    v, u, _ = s.evaluate(y[:, :n], y[:, n])
    eb = s.ebar(y[:, :n], y[:, n])
    sv = scale[owner][:, None] * vbar[owner]
    su = scale[owner][:, None, None] * ubar[owner]
    ok = energy_density_batch(v + sv, u + su) < eb
    ok &= energy_density_batch(v - sv, u - su) < eb
    return ok


def _omega_sums(g, E, weight, t, nu):
    """Sums over cells of parity nu active at time t with plateau at t."""
    odd = nu == 2
    lo, hi = g.time_interval()
    sel = (g.odd == odd) & (lo + g.h / 8 <= t) & (t <= hi - g.h / 8)
    return sel, float(np.sum(np.abs(E[sel]) ** 1)), float(np.sum(weight[sel]))


def _tau_nu(t, h):
    f = np.mod(t / h, 1.0)
    return 1 if 0.25 <= f < 0.75 else 2


def perturbation_step(s, eps, omega0, alpha, seed=0, cfg=None):
    """One perturbation step; returns (new subsolution, ImprovementReport)."""
    cfg = StepConfig() if cfg is None else cfg
    n = s.n
    t0, t1 = s.horizon
    T = s.T
    if not (0 < eps < T / 2):
        raise ValueError("need 0 < eps < T/2")
    ss = np.random.SeedSequence(seed)
    rng_seg, rng_cell, rng_mem = [np.random.default_rng(k) for k in ss.spawn(3)]
    c_target = cfg.c_needed if cfg.c_needed is not None else 0.125 * 0.75 ** n
    w0, w1 = cfg.t_window if cfg.t_window is not None else (t0 + eps / 2, t1 - eps / 2)
    vol = omega0.measure()
    M = _max_ebar(s, omega0, w0, w1, seed)
    h = cfg.h0 if cfg.h0 is not None else 0.8 * eps / 2
    log = []

    def objective_times(hh):
        if cfg.times is not None:
            return np.atleast_1d(np.asarray(cfg.times, float))
        return time_lattice(s, eps, hh)

    rep0 = functional_report(s, eps, omega0, objective_times(h))
    if not rep0.value < -alpha:
        raise PreconditionDeficit(f"I = {rep0.value:.6g} is not below -alpha = {-alpha:.6g}")

    halvings = 0
    while True:
        g = build_grid(omega0, eps, T, h, (w0, w1))
        times = objective_times(h)
        if cfg.active_only:
            lo_t, hi_t = g.time_interval()
            keep = np.array([np.any((lo_t[k] < times) & (times < hi_t[k])) for k in range(g.size)])
            g = _subgrid(g, keep)
        anc = g.anchors
        v, u, _ = s.evaluate(anc[:, :n], anc[:, n])
        eb = s.ebar(anc[:, :n], anc[:, n])
        E = 0.5 * np.sum(v * v, axis=1) - eb
        # Step 1a: the frozen deficit carries a fixed share of alpha
        rep = functional_report(s, eps, omega0, times)
        cell_vol = (2 * PLATEAU * h) ** n
        ratios = []
        for t, F in zip(times, rep.values):
            if F > -alpha / 2:
                continue
            nu = _tau_nu(t, h)
            sel, sabs, _ = _omega_sums(g, E, np.zeros(len(E)), t, nu)
            ratios.append(sabs * cell_vol / alpha)
        c_need = min(ratios) if ratios else np.inf
        log.append({"h": h, "c_needed": c_need, "cells": g.size})
        if c_need < c_target and halvings < cfg.max_halvings:
            h /= 2
            halvings += 1
            continue
        # Step 1b: segments
        r = np.sqrt(2.0 * eb)
        try:
            seg = segments_batch(rng_seg, v, u, r, min_spread=cfg.min_spread)
        except (DecompositionFailed, PointNotInterior) as exc:
            raise CellSegmentFailure(str(exc)) from exc
        y, owner = _cell_points(g, rng_cell, cfg.cell_samples)
        scale = np.ones(g.size)
        ok = _fits(s, y, owner, seg["vbar"], seg["ubar"], scale)
        bad = np.unique(owner[~ok])
        log[-1]["size_failures"] = int(len(bad))
        if len(bad) and cfg.halve_on_size and halvings < cfg.max_halvings:
            h /= 2
            halvings += 1
            continue
        while len(bad):
            scale[bad] *= 0.5
            low = scale < cfg.shrink_floor
            scale[low] = 0.0
            bad = bad[scale[bad] > 0]
            if not len(bad):
                break
            sel = np.isin(owner, bad)
            ok = _fits(s, y[sel], owner[sel], seg["vbar"], seg["ubar"], scale)
            bad = np.unique(owner[sel][~ok])
        break

    lam_half = 0.5 * seg["lam"]
    live = scale > 0
    shrunk = int(np.sum((scale < 1) & live))
    dropped = int(np.sum(~live))
    vb = seg["vbar"] * scale[:, None]
    nz = np.abs(E) > 0
    c_len = float(np.min(np.sum(vb[nz & live] ** 2, axis=1) * M / E[nz & live] ** 2)) \
        if np.any(nz & live) else np.inf

    # asymptotic gain and the constant of the size estimate
    base_layer = AtomLayer(h, cfg.n_start, g.zeta[live], g.tidx[live], seg["a"][live],
                           seg["b"][live], lam_half[live] * scale[live], omega0, tag=f"h={h:g}")
    gain_inf = np.array([asymptotic_gain(base_layer, omega0, float(t)) for t in times])
    Finf = rep.values + gain_inf
    I_inf = float(Finf.min())
    sizes = []
    vb2 = np.sum(vb ** 2, axis=1)
    for t in times:
        nu = _tau_nu(t, h)
        sel, _, _ = _omega_sums(g, E, vb2, t, nu)
        den = np.sum(E[sel] ** 2) / M
        if den > 0:
            sizes.append(0.25 * np.sum(vb2[sel]) / den)
    c_size = float(min(sizes)) if sizes else np.inf

    # Step 2: common frequency search
    N = cfg.n_start
    amp = lam_half * scale
    # membership samples are drawn once; the old layers are evaluated there once
    ym_all, own_all = cell_samples(base_layer, rng_mem, cfg.member_samples)
    cell_of = np.nonzero(live)[0][own_all]
    U_old = s.lifted(ym_all[:, :n], ym_all[:, n])
    eb_all = s.ebar(ym_all[:, :n], ym_all[:, n])
    while True:
        if N > cfg.n_max:
            raise FrequencyBudgetExceeded(f"N would exceed {cfg.n_max}")
        layer = AtomLayer(h, N, g.zeta[live], g.tidx[live], seg["a"][live], seg["b"][live],
                          amp[live], omega0, tag=f"h={h:g}")
        cand = s.add_layer(layer)
        keep = live[cell_of]
        ym, U0, ebm = ym_all[keep], U_old[keep], eb_all[keep]
        own = np.searchsorted(np.nonzero(live)[0], cell_of[keep])
        # principal part at the samples plus a certified bound on the rest of the atom
        vp, up, _ = unlift_batch(U0 + layer.principal(ym[:, :n], ym[:, n]))
        ep = energy_density_batch(vp, up)
        speed = np.linalg.norm(vp, axis=1)
        rem = layer.remainder_orders()[own]

        def slack_at(M):
            R = rem @ (N / float(M)) ** np.arange(1, 4)
            return 0.5 * n * (2.0 * speed * R + R * R + R)

        hard = ep + slack_at(cfg.n_max) >= ebm
        entry = {"N": N, "uncertified": int(np.sum(ep + slack_at(N) >= ebm))}
        if hard.any():
            # no frequency within budget certifies these cells: shorter segments
            cells = np.unique(own[hard])
            entry["shrink"] = int(len(cells))
            log.append(entry)
            live_idx = np.nonzero(live)[0][cells]
            scale[live_idx] *= 0.5
            scale[scale < cfg.shrink_floor] = 0.0
            amp = lam_half * scale
            live = scale > 0
            continue
        if entry["uncertified"]:
            M = N
            while np.any(ep + slack_at(M) >= ebm):
                M *= 2
            log.append(entry)
            N = M
            continue
        cert = float(np.min(ebm - ep - slack_at(N))) if len(ep) else np.inf
        rep_n = functional_report(cand, eps, omega0, times)
        gain_n = rep_n.value - rep.value
        gain_a = I_inf - rep.value
        entry.update({"I": rep_n.value, "gain": gain_n, "gain_inf": gain_a})
        log.append(entry)
        if gain_a <= 0 or gain_n >= cfg.gain_fraction * gain_a:
            break
        N *= 2

    # asymptotic quantities for the final amplitudes
    final_layer = layer
    gain_inf = np.array([asymptotic_gain(final_layer, omega0, float(t)) for t in times])
    I_inf = float((rep.values + gain_inf).min())
    vb = final_layer.vbar
    vb2_all = np.zeros(g.size)
    vb2_all[live] = np.sum(vb ** 2, axis=1)
    sizes = []
    for t in times:
        sel, _, _ = _omega_sums(g, E, vb2_all, t, _tau_nu(t, h))
        den = np.sum(E[sel] ** 2) / M
        if den > 0:
            sizes.append(0.25 * np.sum(vb2_all[sel]) / den)
    c_size = float(min(sizes)) if sizes else np.inf
    shrunk = int(np.sum((scale < 1) & live))
    dropped = int(np.sum(~live))

    C = c_size * c_need ** 2 / (M * vol)
    beta_pred = min(alpha / 2, C * alpha ** 2)
    beta_ach = rep_n.value - rep.value
    qerr = rep_n.error + rep.error
    slack = qerr + max(0.0, (I_inf - rep.value) - beta_ach)
    mem = cert
    report = ImprovementReport(
        alpha=float(alpha), beta_predicted=float(beta_pred), beta_achieved=float(beta_ach),
        beta_error=float(qerr), slack=float(slack), C=float(C), c_needed=float(c_need),
        c_size=float(c_size), c_length=float(c_len), M=float(M), h=float(h), N=int(N),
        cell_N=np.full(len(final_layer), int(N)), quad_error=float(qerr),
        I_before=float(rep.value), I_after=float(rep_n.value), I_asymptotic=I_inf,
        gain_asymptotic=float(I_inf - rep.value), atoms=len(final_layer), shrunk=shrunk,
        dropped=dropped, halvings=halvings, margin=mem, log=log)
    return cand, report


# ---------------------------------------------------------------- iteration

@dataclass
class Trajectory:
    subsolutions: list
    reports: list
    values: list
    distances: list


def iterate(s0, eps, omega0, budget, seed=0, tolerance=1e-6, step_cfg=None, metric=None,
            times=None):
    """Repeated perturbation steps with alpha_k = (3/4)(-I_k)."""
    subs = [s0]
    reports = []
    vals = [I_functional(s0, eps, omega0, times)]
    dists = []
    s = s0
    for k in range(budget):
        if -vals[-1] < tolerance:
            break
        alpha = 0.75 * (-vals[-1])
        s_new, rep = perturbation_step(s, eps, omega0, alpha, seed=seed + k, cfg=step_cfg)
        reports.append(rep)
        dists.append(weak_distance(s, s_new, metric))
        subs.append(s_new)
        vals.append(rep.I_after)
        s = s_new
    return Trajectory(subs, reports, vals, dists)
