"""Verification instruments: residuals, energy profiles and their classification.

Probes are sums of tensor-product cell profiles sharing one centre and one
width per axis, so every pairing with an atom layer factorises into
one-dimensional oscillatory integrals (`quad.j_rows`).  Fields that are not
made of atoms (callables, subsolutions with a base) go through tensor
Gauss-Legendre quadrature over the probe support instead.  Every residual
carries an error bar from two quadrature resolutions plus a rounding floor.
"""
import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .construct import ScenarioField
from .fields import Subsolution, tensor_gl, unlift_batch
from .grid import BoxUnion, ramp
from .kinetic import kinetic_integral
from .quad import j_rows, profile_moments
from .states import energy_density_batch
from .waves import multi_indices

ROUND = 1e-13


# ---------------------------------------------------------------- probes

@dataclass(frozen=True)
class Probe:
    """sum of coef * prod_d rho^(order_d)(y_d - center_d; width_d), per component.

    `comps[c]` is a tuple of (coef, orders) pairs; orders has n+1 entries
    (space then time).  A spatial probe has a time width of zero and
    ignores its time entries.
    """
    center: np.ndarray
    width: np.ndarray
    comps: tuple
    kind: str = "scalar"

    @property
    def dim(self):
        return len(self.center)

    def box(self):
        return self.center - 0.5 * self.width, self.center + 0.5 * self.width

    def derivative(self, d):
        out = []
        for terms in self.comps:
            new = []
            for coef, orders in terms:
                o = list(orders)
                o[d] += 1
                if o[d] > 3:
                    raise ValueError("probe derivatives are available up to order 3")
                new.append((coef, tuple(o)))
            out.append(tuple(new))
        return Probe(self.center, self.width, tuple(out), self.kind)

    def component(self, c):
        return Probe(self.center, self.width, (self.comps[c],), "scalar")

    def divergence(self):
        """Scalar probe sum_c d_c phi_c with like terms merged."""
        acc = {}
        for c, terms in enumerate(self.comps):
            for coef, orders in terms:
                o = list(orders)
                o[c] += 1
                acc[tuple(o)] = acc.get(tuple(o), 0.0) + coef
        terms = tuple((v, k) for k, v in sorted(acc.items()) if v != 0.0)
        return Probe(self.center, self.width, (terms,), "scalar")

    def __call__(self, y):
        """Values at points y (P, n+1); shape (P, components)."""
        y = np.atleast_2d(np.asarray(y, float))
        r = [_axis_profile(y[:, d] - self.center[d], self.width[d]) for d in range(self.dim)]
        out = np.zeros((len(y), len(self.comps)))
        for c, terms in enumerate(self.comps):
            for coef, orders in terms:
                v = np.full(len(y), float(coef))
                for d, o in enumerate(orders):
                    v = v * r[d][o]
                out[:, c] += v
        return out


def _axis_profile(s, w):
    """ramp derivatives along one axis; a zero width means the constant 1 (spatial probes)."""
    if w == 0:
        out = np.zeros((4,) + np.shape(s))
        out[0] = 1.0
        return out
    return ramp(s, w)


def _scalar_terms(n):
    return (((1.0, (0,) * (n + 1)),),)


def divfree_probe(center, width, axis=2, sign=1.0):
    """Curl of S e_axis (n = 3) or the rotated gradient of S (n = 2), S a profile."""
    center = np.asarray(center, float)
    n = len(center) - 1
    z = [0] * (n + 1)

    def d(*ks):
        o = list(z)
        for k in ks:
            o[k] += 1
        return tuple(o)

    if n == 2:
        comps = (((sign, d(1)),), ((-sign, d(0)),))
    elif n == 3:
        comps = [(), (), ()]
        for i in range(3):
            for j in range(3):
                e = _levi(i, j, axis)
                if e:
                    comps[i] = comps[i] + ((sign * e, d(j)),)
        comps = tuple(comps)
    else:
        raise ValueError("divergence-free probes need n in {2, 3}")
    return Probe(center, np.asarray(width, float), comps, "divfree")


def _levi(i, j, k):
    return int((i - j) * (j - k) * (k - i) / 2)


@dataclass
class TestFunctionBattery:
    """Seeded probes in a space-time window: scalar, vector and divergence-free families."""
    lo: np.ndarray            # space-time lower corner (n+1,)
    hi: np.ndarray
    count: int = 32
    scales: int = 3
    seed: int = 0
    initial: bool = False     # let probes straddle the lower time bound
    scalar: list = field(default_factory=list)
    vector: list = field(default_factory=list)
    divfree: list = field(default_factory=list)
    __test__ = False

    def __post_init__(self):
        self.lo = np.asarray(self.lo, float)
        self.hi = np.asarray(self.hi, float)
        if not self.scalar:
            self._build()

    @property
    def n(self):
        return len(self.lo) - 1

    def _build(self):
        n = self.n
        rng = np.random.default_rng(self.seed)
        span = self.hi - self.lo
        base = 0.5 * span
        base[:n] = 0.5 * np.min(span[:n])
        for k in range(self.count):
            w = base * 2.0 ** -(k % self.scales)
            c = self.lo + 0.5 * w + rng.random(n + 1) * (span - w)
            if self.initial:
                c[n] = self.lo[n] + rng.random() * (span[n] - 0.5 * w[n])
            self.scalar.append(Probe(c, w, _scalar_terms(n), "scalar"))
            e = rng.normal(size=n)
            e /= np.linalg.norm(e)
            self.vector.append(Probe(c, w, tuple(((float(e[i]), (0,) * (n + 1)),) for i in range(n)),
                                     "vector"))
            axis = int(rng.integers(0, 3)) if n == 3 else 2
            self.divfree.append(divfree_probe(c, w, axis, 1.0 if rng.random() < 0.5 else -1.0))

    def family(self, name):
        return getattr(self, name)


def spatial_probes(lo, hi, levels=3, seed=0, per_level=4):
    """Dyadic hierarchy of spatial vector probes (time entries ignored)."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    n = len(lo)
    rng = np.random.default_rng(seed)
    out = []
    for j in range(levels):
        w = 0.5 * (hi - lo) * 2.0 ** -j
        for _ in range(per_level):
            c = lo + 0.5 * w + rng.random(n) * (hi - lo - w)
            e = rng.normal(size=n)
            e /= np.linalg.norm(e)
            out.append(Probe(np.append(c, 0.0), np.append(w, 0.0),
                             tuple(((float(e[i]), (0,) * (n + 1)),) for i in range(n)), "vector"))
    return out


# ---------------------------------------------------------------- reports

@dataclass
class ResidualReport:
    name: str
    residuals: np.ndarray
    errors: np.ndarray
    signed: Optional[np.ndarray] = None
    flags: Optional[np.ndarray] = None

    @property
    def max(self):
        return float(np.max(self.residuals)) if len(self.residuals) else 0.0

    @property
    def rms(self):
        return float(np.sqrt(np.mean(self.residuals ** 2))) if len(self.residuals) else 0.0

    def within(self, factor=1.0):
        return bool(np.all(self.residuals <= factor * self.errors))

    def worst_ratio(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            r = self.residuals / self.errors
        r = np.where(self.residuals == 0, 0.0, r)
        return float(np.max(r)) if len(r) else 0.0

    def rows(self):
        return [(k, float(r), float(e)) for k, (r, e) in enumerate(zip(self.residuals, self.errors))]

    def to_csv(self, path):
        write_csv(path, ["probe_id", "residual", "error_bar"], self.rows())


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


# ---------------------------------------------------------------- exact pairings

def _sources(f, t0, t1):
    """Atom-only pieces of a field over [t0, t1] as (a, b, subsolution, shift), or None."""
    if isinstance(f, ScenarioField):
        segs = f.segments(t0, t1)
        if any(s is not None and s.base is not None for _, _, s, _ in segs):
            return None
        return [sg for sg in segs if sg[2] is not None]
    if isinstance(f, Subsolution) and f.base is None:
        a, b = max(t0, f.horizon[0]), min(t1, f.horizon[1])
        return [(a, b, f, 0.0)] if b > a else []
    return None


def _layer_tensor(L, probe, ta, tb, region, refine, slice_t=None):
    """int U_L(y) prod_d rho^(o_d) over the probe box (and region boxes) for all orders.

    Returns a real array (m, m, 4, ..., 4) with n+1 order axes, or n order
    axes when `slice_t` is given (spatial integral at that time).
    """
    n = L.n
    m = n + 1
    nd = n if slice_t is not None else n + 1
    shape = (m, m) + (4,) * nd
    if len(L) == 0:
        return np.zeros(shape)
    plo, phi = probe.box()
    c = L.centers
    alo = c - 0.5 * L.h
    ahi = c + 0.5 * L.h
    lo = np.maximum(alo, plo)
    hi = np.minimum(ahi, phi)
    if slice_t is None:
        lo[:, n] = np.maximum(lo[:, n], ta)
        hi[:, n] = np.minimum(hi[:, n], tb)
        keep = np.all(hi > lo, axis=1)
    else:
        keep = np.all(hi[:, :n] > lo[:, :n], axis=1) & (np.abs(slice_t - c[:, n]) < 0.5 * L.h)
    idx = np.nonzero(keep)[0]
    if region is not None:
        rows, rl, rh = [], [], []
        for blo, bhi in region.boxes:
            l2 = lo[idx].copy()
            h2 = hi[idx].copy()
            l2[:, :n] = np.maximum(l2[:, :n], blo)
            h2[:, :n] = np.minimum(h2[:, :n], bhi)
            ok = np.all(h2[:, :n] > l2[:, :n], axis=1)
            rows.append(idx[ok])
            rl.append(l2[ok])
            rh.append(h2[ok])
        idx = np.concatenate(rows)
        lo = np.concatenate(rl) if rl else np.zeros((0, m))
        hi = np.concatenate(rh) if rh else np.zeros((0, m))
    else:
        lo, hi = lo[idx], hi[idx]
    if len(idx) == 0:
        return np.zeros(shape)
    k = L.N * L.eta[idx]
    J = [j_rows(lo[:, d], hi[:, d], c[idx, d], L.h, probe.center[d], probe.width[d], k[:, d],
                refine=refine) for d in range(nd)]
    if slice_t is not None:
        rt = ramp(slice_t - c[idx, n], L.h) * np.exp(1j * k[:, n] * slice_t)
    K = L.coeffs[idx]
    out = np.zeros((m, m) + (4,) * nd, complex)
    letters = "abcdefg"[:nd]
    for bi, be in enumerate(multi_indices(n + 1, 3)):
        P = J[0][:, be[0], :]
        for d in range(1, nd):
            P = (P[..., None] * J[d][:, be[d], :].reshape((len(idx),) + (1,) * d + (4,)))
        if slice_t is not None:
            P = P * rt[be[n]].reshape((-1,) + (1,) * nd)
        out += np.einsum(f"rij,r{letters}->ij{letters}", K[:, bi], P)
    return np.real(out)


def _region_tensor(probe, ta, tb, region, slice_t=None):
    """int over region x [ta, tb] of prod_d rho^(o_d): array (4,)*(n+1), with its error.

    region None means all of space.  With slice_t the time factor is the
    probe's time profile at that time (n+1 axes kept for uniform indexing).
    """
    n = probe.dim - 1
    plo, phi = probe.box()
    if slice_t is None:
        tm, te = profile_moments(max(ta, plo[n]), min(tb, phi[n]), probe.center[n], probe.width[n])
        tm, te = tm[0], te[0]
    else:
        tm = _axis_profile(np.asarray(slice_t - probe.center[n]), probe.width[n])
        te = 0.0
    boxes = [(plo[:n], phi[:n])] if region is None else region.boxes
    total = np.zeros((4,) * (n + 1))
    err = 0.0
    for blo, bhi in boxes:
        l = np.maximum(blo, plo[:n])
        h = np.minimum(bhi, phi[:n])
        if np.any(h <= l):
            continue
        mom, me = profile_moments(l, h, probe.center[:n], probe.width[:n])
        t = mom[0]
        for d in range(1, n):
            t = np.multiply.outer(t, mom[d])
        total += np.multiply.outer(t, tm)
        err += float(np.sum(me)) + float(te)
    return total, err


def _probe_value(T, probe, comp, lead, tfac=None):
    """sum over terms of component `comp`: coef * T[lead + orders].

    For spatial tensors (one axis short) `tfac` supplies the probe's time
    profile derivatives at the slice.
    """
    acc = 0.0
    absacc = 0.0
    k = T.ndim - len(lead)
    for coef, orders in probe.comps[comp]:
        v = coef * T[lead + tuple(orders[:k])]
        if tfac is not None:
            v = v * tfac[orders[-1]]
        acc += v
        absacc += abs(v)
    return acc, absacc


class _Pairing:
    """Cached lifted-field tensors of one field against one probe geometry."""

    def __init__(self, f, probe, t0, t1=np.inf, region=None):
        self.f = f
        self.probe = probe
        self.region = region
        plo, phi = probe.box()
        self.ta = max(t0, plo[-1])
        self.tb = min(t1, phi[-1])
        self.t0 = t0
        self._cache = {}

    def tensor(self, refine, region=False, slice_t=None):
        key = (refine, region, slice_t)
        if key not in self._cache:
            reg = self.region if region else None
            n = self.probe.dim - 1
            m = n + 1
            nd = n if slice_t is not None else n + 1
            out = np.zeros((m, m) + (4,) * nd)
            if slice_t is None:
                segs = _sources(self.f, self.ta, self.tb) if self.tb > self.ta else []
            else:
                segs = _sources(self.f, slice_t, slice_t)
                if isinstance(self.f, ScenarioField):
                    j = int(self.f.piece_index(np.asarray(slice_t)))
                    pc = self.f.pieces[j] if j >= 0 else None
                    segs = [] if pc is None or pc.source is None else \
                        [(slice_t, slice_t, pc.source, pc.shift + (slice_t - self.f.local_time(slice_t)))]
                else:
                    segs = [(slice_t, slice_t, self.f, 0.0)] if segs is not None else None
            if segs is None:
                raise TypeError("exact pairing needs an atom-only field")
            for a, b, src, shift in segs:
                pr = Probe(self.probe.center - np.append(np.zeros(n), shift), self.probe.width,
                           self.probe.comps, self.probe.kind)
                for L in src.layers:
                    if slice_t is None:
                        out += _layer_tensor(L, pr, a - shift, b - shift, reg, refine)
                    else:
                        out += _layer_tensor(L, pr, None, None, reg, refine, slice_t - shift)
            self._cache[key] = out
        return self._cache[key]


def exact_supported(f):
    return _sources(f, 0.0, 0.0) is not None


class _Acc:
    """Residual accumulator for one probe at two resolutions."""

    def __init__(self):
        self.v = np.zeros(2)
        self.extra = 0.0
        self.mag = 0.0

    def add_pair(self, vals, mags):
        self.v += np.asarray(vals)
        self.mag += float(mags)

    def add_const(self, val, err):
        self.v += val
        self.extra += err
        self.mag += abs(val)

    def result(self):
        return float(self.v[1]), float(abs(self.v[1] - self.v[0]) + self.extra + ROUND * self.mag)


def _field_term(pair, probe, comp, row, col, weight=None, slice_t=None):
    """sum_terms coef * int U[row, col] * term, both resolutions; weight=(w_in, w_out)."""
    n = probe.dim - 1
    tfac = None if slice_t is None else _axis_profile(slice_t - probe.center[n], probe.width[n])
    vals, mag = [], 0.0
    for refine in (1, 2):
        T = pair.tensor(refine, False, slice_t)
        if weight is not None:
            w_in, w_out = weight
            T = w_out * T + (w_in - w_out) * pair.tensor(refine, True, slice_t)
        v, a = _probe_value(T, probe, comp, (row, col), tfac)
        vals.append(v)
        mag = max(mag, a)
    return vals, mag


def _const_term(probe, comp, ta, tb, coef, slice_t=None):
    """coef_in * int_region + coef_out * int_complement of the probe component."""
    c_in, c_out, region = coef
    acc, err, mag = 0.0, 0.0, 0.0
    if c_out != 0.0 or region is None:
        T, e = _region_tensor(probe, ta, tb, None, slice_t)
        v, a = _probe_value(T, probe, comp, ())
        acc += c_out * v
        err += abs(c_out) * e
        mag += abs(c_out) * a
    if region is not None and c_in != c_out:
        T, e = _region_tensor(probe, ta, tb, region, slice_t)
        v, a = _probe_value(T, probe, comp, ())
        acc += (c_in - c_out) * v
        err += abs(c_in - c_out) * e
        mag += abs(c_in - c_out) * a
    return acc, err, mag


# ---------------------------------------------------------------- brute quadrature

def _brute_nodes(probe, t0, panels, order=6):
    lo, hi = probe.box()
    lo = lo.copy()
    lo[-1] = max(lo[-1], t0)
    if hi[-1] <= lo[-1]:
        return np.zeros((0, probe.dim)), np.zeros(0)
    return tensor_gl(lo, hi, panels, order)


def _brute_slice_nodes(probe, panels, order=6):
    lo, hi = probe.box()
    n = probe.dim - 1
    return tensor_gl(lo[:n], hi[:n], panels, order)


def _velocity_fn(f):
    if hasattr(f, "velocity"):
        return f.velocity
    return f


# ---------------------------------------------------------------- linear residual

def linear_residual(f, window, resolution, points=9):
    """Central-difference residual of the lifted linear system at a fixed lattice.

    `window` is (lo, hi) over space-time; the stencil step is the smallest
    window side over `resolution`.  Each point reports the row-norm of the
    space-time divergence; the error bar is the Richardson estimate from the
    step and its half.  Points whose residual does not shrink under halving
    are flagged.
    """
    lo, hi = (np.asarray(w, float) for w in window)
    lift = f.lifted if hasattr(f, "lifted") else f
    axes = [np.linspace(a, b, points) for a, b in zip(lo, hi)]
    y = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
    step = float(np.min(hi - lo)) / resolution
    field_ = lambda p: lift(p[:, :-1], p[:, -1])
    from .waves import fd_divergence
    r1 = np.linalg.norm(fd_divergence(field_, y, step), axis=1)
    r2 = np.linalg.norm(fd_divergence(field_, y, step / 2), axis=1)
    err = np.abs(r1 - r2) * 4.0 / 3.0
    floor = 1e-9 * max(1.0, float(np.max(r1)))
    flags = (r1 > floor) & (r2 > 0.5 * r1)
    return ResidualReport("linear", r1, err, None, flags)


# ---------------------------------------------------------------- weak forms

def _momentum(f, probe, t0, weight=None, iso=None, initial=True, ta_tb=None):
    """int int rho v.dt phi + <rho U_block + iso I, grad phi> + int rho v0.phi(., t0)."""
    n = probe.dim - 1
    pair = _Pairing(f, probe, t0, region=None if weight is None else weight[2])
    ta, tb = pair.ta, pair.tb
    acc = _Acc()
    w = None if weight is None else weight[:2]
    for c in range(n):
        if tb > ta:
            for d in range(n + 1):
                dp = probe.derivative(d)
                vals, mag = _field_term(pair, dp, c, c, d, w)
                acc.add_pair(vals, mag)
                if iso is not None and d == c:
                    v, e, mg = _const_term(dp, c, ta, tb, iso)
                    acc.add_const(v, e)
        if initial and probe.box()[0][n] < t0 < probe.box()[1][n]:
            vals, mag = _field_term(pair, probe, c, c, n, w, slice_t=t0)
            acc.add_pair(vals, mag)
    return acc.result()


def _map(pool, fn, items):
    return list(pool.map(fn, items)) if pool is not None else [fn(x) for x in items]


def _report(name, pairs):
    vals = np.array([v for v, _ in pairs], float).reshape(-1)
    errs = np.array([e for _, e in pairs], float).reshape(-1)
    return ResidualReport(name, np.abs(vals), errs, vals)


def weak_euler_residual(v, battery, v0=None, pressure=None, t0=None, family="divfree",
                        iso=None, pool=None):
    """Per-probe weak Euler residual.

    Atom-only fields use the relaxed form (v (x) v replaced by the lifted
    block u + q I, plus an optional piecewise-constant isotropic part `iso`
    = (inside, outside, region)).  Other fields are callables v(x, t) with
    an optional pressure callable, evaluated by tensor quadrature.  `pool`
    is any executor with an order-preserving map.
    """
    t0 = battery.lo[-1] if t0 is None else t0
    if exact_supported(v):
        fn = lambda pr: _momentum(v, pr, t0, None, iso)
    else:
        vel = _velocity_fn(v)
        fn = lambda pr: _momentum_brute(vel, pr, t0, v0, pressure)
    return _report("weak_euler", _map(pool, fn, battery.family(family)))


def _momentum_brute(vel, probe, t0, v0, pressure, panels=(8, 16)):
    n = probe.dim - 1
    vals = []
    mag = 0.0
    for p in panels:
        y, w = _brute_nodes(probe, t0, p)
        total = 0.0
        if len(y):
            vv = vel(y[:, :n], y[:, n])
            pp = np.zeros(len(y)) if pressure is None else pressure(y[:, :n], y[:, n])
            grad = [probe.derivative(d)(y) for d in range(n + 1)]
            for c in range(n):
                term = vv[:, c] * grad[n][:, c]
                for d in range(n):
                    term = term + (vv[:, c] * vv[:, d] + (pp if c == d else 0.0)) * grad[d][:, c]
                total += float(np.sum(w * term))
                mag = max(mag, float(np.sum(w * np.abs(term))))
        lo, hi = probe.box()
        if v0 is not None and lo[n] < t0 < hi[n]:
            x, wx = _brute_slice_nodes(probe, p)
            ph = probe(np.concatenate([x, np.full((len(x), 1), t0)], axis=1))
            total += float(np.sum(wx * np.sum(v0(x) * ph, axis=1)))
        vals.append(total)
    return vals[1], abs(vals[1] - vals[0]) + ROUND * mag


def _scalar_flux(f, probe, t0, weight):
    """int int w(x) v . grad psi for an atom field, two resolutions."""
    n = probe.dim - 1
    pair = _Pairing(f, probe, t0, region=weight[2])
    out = [0.0, 0.0]
    mag = 0.0
    if pair.tb <= pair.ta:
        return out, mag
    for c in range(n):
        dp = probe.derivative(c)
        vals, mg = _field_term(pair, dp, 0, c, n, weight[:2])
        out = [out[0] + vals[0], out[1] + vals[1]]
        mag += mg
    return out, mag


def _conservation(f, pr, t0, density, flux, region, initial=True):
    """int int d dt psi + c v.grad psi (+ int d psi(., t0)) for piecewise constants d, c."""
    n = pr.dim - 1
    acc = _Acc()
    lo, hi = pr.box()
    ta, tb = max(t0, lo[n]), hi[n]
    if tb > ta:
        v, e, _ = _const_term(pr.derivative(n), 0, ta, tb, density + (region,))
        acc.add_const(v, e)
    vals, mg = _scalar_flux(f, pr, t0, flux + (region,))
    acc.add_pair(vals, mg)
    if initial and lo[n] < t0 < hi[n]:
        v, e, _ = _const_term(pr, 0, None, None, density + (region,), slice_t=t0)
        acc.add_const(v, e)
    return acc.result()


def local_energy_residual(v, p, battery, kinetic=None, omega=None, t0=None, pool=None):
    """int int |v|^2/2 dt phi + (|v|^2/2 + p) v.grad phi per scalar probe (signed).

    With an atom field, `kinetic` and `p` are piecewise constants
    (inside, outside) on `omega`, substituted at the relaxed level.  Otherwise
    v and p are callables and `kinetic` is ignored.
    """
    t0 = battery.lo[-1] if t0 is None else t0
    if exact_supported(v) and kinetic is not None:
        flux = (kinetic[0] + p[0], kinetic[1] + p[1])
        fn = lambda pr: _conservation(v, pr, t0, tuple(kinetic), flux, omega, initial=False)
    else:
        vel = _velocity_fn(v)
        fn = lambda pr: _local_energy_brute(vel, p, pr, t0)
    return _report("local_energy", _map(pool, fn, battery.scalar))


def _local_energy_brute(vel, p, probe, t0, panels=(8, 16)):
    n = probe.dim - 1
    vals, mag = [], 0.0
    for k in panels:
        y, w = _brute_nodes(probe, t0, k)
        if not len(y):
            vals.append(0.0)
            continue
        vv = vel(y[:, :n], y[:, n])
        pp = np.zeros(len(y)) if p is None else p(y[:, :n], y[:, n])
        ke = 0.5 * np.sum(vv * vv, axis=1)
        term = ke * probe.derivative(n)(y)[:, 0]
        for c in range(n):
            term = term + (ke + pp) * vv[:, c] * probe.derivative(c)(y)[:, 0]
        vals.append(float(np.sum(w * term)))
        mag = max(mag, float(np.sum(w * np.abs(term))))
    return vals[1], abs(vals[1] - vals[0]) + ROUND * mag


# ---------------------------------------------------------------- p-system

def psystem_residuals(ps, battery, t0=0.0, pool=None):
    """Residuals of the mass, momentum and entropy weak forms of the lifted state.

    The battery should allow probes straddling t0 (`initial=True`) so the
    initial-data terms are exercised.
    """
    reg = ps.density_region
    f = ps.velocity_field
    rho = (1.0, 2.0)
    ent = (float(ps.eps1 + 0.5 * ps.speed2), float(2.0 * ps.internal_energy(2.0)[0]))
    flux = (ps.flux_constant, ent[1] + ps.beta_p)
    # momentum flux rho (u + gamma 1_Omega I) + p(rho) I, with rho = 1 on the atoms
    iso = (ps.gamma + ps.alpha_p, ps.beta_p, reg)
    mass = _map(pool, lambda pr: _conservation(f, pr, t0, rho, rho, reg), battery.scalar)
    mom = _map(pool, lambda pr: _momentum(f, pr, t0, rho + (reg,), iso), battery.vector)
    entropy = _map(pool, lambda pr: _conservation(f, pr, t0, ent, flux, reg), battery.scalar)
    return {"mass": _report("mass", mass), "momentum": _report("momentum", mom),
            "entropy": _report("entropy", entropy)}


# ---------------------------------------------------------------- energy profiles

@dataclass
class EnergyProfile:
    times: np.ndarray
    kinetic: Optional[np.ndarray]
    generalized: Optional[np.ndarray]
    target: Optional[np.ndarray]
    kinetic_error: Optional[np.ndarray] = None
    generalized_error: Optional[np.ndarray] = None
    rtol: float = 1e-3
    kinetic_nodes: Optional[np.ndarray] = None   # kinetic integral on the generalized nodes

    def primary(self):
        for v in (self.target, self.generalized, self.kinetic):
            if v is not None:
                return v
        raise ValueError("empty profile")

    @property
    def flags(self):
        return classify_profile(self.primary(), self.rtol)

    def dominance_gap(self):
        """min over times of generalized - kinetic, both on the same quadrature nodes."""
        if self.kinetic_nodes is None or self.generalized is None:
            return None
        return float(np.min(self.generalized - self.kinetic_nodes))

    def rows(self):
        out = []
        for k, t in enumerate(self.times):
            row = [float(t)]
            for v in (self.kinetic, self.generalized, self.target):
                row.append(float(v[k]) if v is not None else "")
            out.append(row)
        return out

    def to_csv(self, path):
        write_csv(path, ["t", "kinetic", "generalized", "target"], self.rows())


def classify_profile(values, rtol=1e-3):
    """Flags {equality, strong, weak} for an energy series in time order."""
    v = np.asarray(values, float)
    tol = rtol * max(float(np.max(np.abs(v))), 1e-300)
    equality = bool(np.max(v) - np.min(v) <= tol)
    strong = bool(np.all(v <= np.minimum.accumulate(v) + tol))
    weak = bool(np.all(v <= v[0] + tol))
    return {"equality": equality, "strong": strong, "weak": weak}


def _kinetic_at(f, omega, t):
    if isinstance(f, ScenarioField):
        j = int(f.piece_index(np.asarray(t)))
        if j < 0 or f.pieces[j].source is None:
            return 0.0, 0.0
        pc = f.pieces[j]
        tl = float(f.local_time(np.asarray(t)))
        return kinetic_integral(pc.source, omega, tl - pc.shift)
    return kinetic_integral(f, omega, t)


def _field_layers(f):
    if isinstance(f, ScenarioField):
        out = []
        for pc in f.pieces:
            if pc.source is not None:
                out.extend(pc.source.layers)
        return [L for L in out if len(L)]
    return [L for L in getattr(f, "layers", ()) if len(L)]


def _aligned_edges(f, lo, hi, refine, base=8, edge_panels=16):
    """Per-axis panel edges through every cell and plateau boundary of the atoms.

    Each piece between breakpoints gets at least `edge_panels` panels (the
    profile transitions are steep) and at most a quarter oscillation
    wavelength per panel; without atoms the box gets `base` panels.
    """
    layers = _field_layers(f)
    edges = []
    for d in range(len(lo)):
        pts = [np.linspace(lo[d], hi[d], base + 1)]
        wave = np.inf
        for L in layers:
            c = np.unique(L.centers[:, d])
            for off in (-0.5, -0.375, 0.375, 0.5):
                pts.append(c + off * L.h)
            k = L.N * float(np.max(np.abs(L.eta[:, d])))
            if k > 0:
                wave = min(wave, 2 * np.pi / k)
        e = np.unique(np.clip(np.concatenate(pts), lo[d], hi[d]))
        mid = 0.5 * (e[1:] + e[:-1])
        steep = np.zeros(len(mid), bool)
        for L in layers:
            dist = np.abs(mid[:, None] - np.unique(L.centers[:, d])[None, :])
            steep |= np.any((dist > 0.375 * L.h) & (dist < 0.5 * L.h), axis=1)
        seg = []
        for a, b, st in zip(e[:-1], e[1:], steep):
            q = edge_panels if st else (2 if layers else 1)
            if np.isfinite(wave):
                q = max(q, int(np.ceil(4 * (b - a) / wave)))
            seg.append(np.linspace(a, b, q * refine + 1)[:-1])
        seg.append([e[-1]])
        edges.append(np.concatenate(seg))
    return edges


def _gl_on_edges(edges, order=6):
    xg, wg = np.polynomial.legendre.leggauss(order)
    pts, wts = [], []
    for e in edges:
        c = 0.5 * (e[1:] + e[:-1])
        hw = 0.5 * (e[1:] - e[:-1])
        pts.append((c[:, None] + hw[:, None] * xg).ravel())
        wts.append((hw[:, None] * wg).ravel())
    x = np.stack([g.ravel() for g in np.meshgrid(*pts, indexing="ij")], axis=1)
    w = np.prod(np.stack([g.ravel() for g in np.meshgrid(*wts, indexing="ij")], axis=1), axis=1)
    return x, w


def quadrature_size(f, omega, refine=2, order=6):
    """Number of nodes `generalized_integral` would use at its fine level."""
    total = 0
    for lo, hi in omega.boxes:
        total += int(np.prod([(len(e) - 1) * order for e in _aligned_edges(f, lo, hi, refine)]))
    return total


def generalized_integral(f, omega, t, panels=None, order=6, chunk=1 << 16):
    """(int e(v, u), int |v|^2 / 2, error of the former) over omega at time t.

    Tensor Gauss-Legendre at two resolutions.  By default panels are aligned
    with the atom breakpoints (`panels` = (coarse, fine) counts overrides
    this).  Both integrals use the same nodes, so pointwise dominance
    carries over.
    """
    vals = []
    kin = 0.0
    for r in (1, 2):
        acc, kacc = 0.0, 0.0
        for lo, hi in omega.boxes:
            if panels is None:
                x, w = _gl_on_edges(_aligned_edges(f, lo, hi, r), order)
            else:
                x, w = tensor_gl(lo, hi, panels[r - 1], order)
            for s in range(0, len(x), chunk):
                xs = x[s:s + chunk]
                v, u, _ = f.evaluate(xs, np.full(len(xs), t))
                acc += float(np.sum(w[s:s + chunk] * energy_density_batch(v, u)))
                kacc += float(np.sum(w[s:s + chunk] * 0.5 * np.sum(v * v, axis=1)))
        vals.append(acc)
        kin = kacc
    return vals[1], kin, abs(vals[1] - vals[0])


def energy_profile(s, times, omega=None, target=None, generalized=True, rtol=1e-3,
                   panels=None, max_nodes=4_000_000):
    """Kinetic and generalized energy integrals over time plus a target series.

    `target` is a callable t -> value (for scenario fields their target
    energy is used by default).  The generalized series is skipped (None)
    when its aligned quadrature would exceed `max_nodes` per time.  Classification uses the target when given,
    else the generalized series.
    """
    times = np.asarray(times, float)
    omega = s.omega if omega is None else omega
    kin = np.zeros(len(times))
    kerr = np.zeros(len(times))
    for k, t in enumerate(times):
        kin[k], kerr[k] = _kinetic_at(s, omega, float(t))
    gen = gerr = kq = None
    if generalized and panels is None and quadrature_size(s, omega) > max_nodes:
        generalized = False
    if generalized:
        gen = np.zeros(len(times))
        gerr = np.zeros(len(times))
        kq = np.zeros(len(times))
        for k, t in enumerate(times):
            gen[k], kq[k], gerr[k] = generalized_integral(s, omega, float(t), panels)
    if target is None and isinstance(s, ScenarioField):
        target = s.target_energy
    tgt = None if target is None else np.asarray(target(times), float)
    return EnergyProfile(times, kin, gen, tgt, kerr, gerr, rtol, kq)


def target_profile(target, times, rtol=1e-3):
    times = np.asarray(times, float)
    return EnergyProfile(times, None, None, np.asarray(target(times), float), rtol=rtol)


# ---------------------------------------------------------------- weak continuity

@dataclass
class ContinuityReport:
    times: np.ndarray
    values: np.ndarray        # (probes, times)
    errors: np.ndarray
    modulus: np.ndarray       # per probe max |dPhi| / dt
    flagged: list             # (probe, time index) jump candidates

    @property
    def continuous(self):
        return not self.flagged


def _slice_pairing(v, probe, t):
    """(value, error) of int phi(x) . v(x, t) dx."""
    n = probe.dim - 1
    if exact_supported(v):
        pair = _Pairing(v, probe, -np.inf)
        vals = [0.0, 0.0]
        mag = 0.0
        for c in range(n):
            vv, mg = _field_term(pair, probe, c, c, n, None, slice_t=t)
            vals = [vals[0] + vv[0], vals[1] + vv[1]]
            mag += mg
        return vals[1], abs(vals[1] - vals[0]) + ROUND * mag
    vel = _velocity_fn(v)
    vals = []
    for p in (8, 16):
        x, w = _brute_slice_nodes(probe, p)
        ph = probe(np.concatenate([x, np.zeros((len(x), 1))], axis=1))
        vals.append(float(np.sum(w * np.sum(vel(x, np.full(len(x), t)) * ph, axis=1))))
    return vals[1], abs(vals[1] - vals[0])


def weak_continuity_probe(v, probes, times, factor=5.0, pool=None):
    """Phi_i(t) = int phi_i . v(., t) on a time lattice with jump detection.

    A jump candidate is an increment exceeding `factor` times both
    neighbouring increments and its own quadrature error.
    """
    times = np.asarray(times, float)
    P = len(probes)
    rows = _map(pool, lambda pr: [_slice_pairing(v, pr, float(t)) for t in times], probes)
    vals = np.array([[a for a, _ in r] for r in rows]).reshape(P, len(times))
    errs = np.array([[b for _, b in r] for r in rows]).reshape(P, len(times))
    dt = np.diff(times)
    inc = np.abs(np.diff(vals, axis=1))
    modulus = np.max(inc / dt, axis=1) if len(dt) else np.zeros(P)
    flagged = []
    for i in range(P):
        for k in range(inc.shape[1]):
            nb = []
            if k > 0:
                nb.append(inc[i, k - 1])
            if k + 1 < inc.shape[1]:
                nb.append(inc[i, k + 1])
            floor = errs[i, k] + errs[i, k + 1]
            if inc[i, k] > floor and all(inc[i, k] > factor * x for x in nb):
                flagged.append((i, k))
    return ContinuityReport(times, vals, errs, modulus, flagged)


# ---------------------------------------------------------------- field dumps

def write_field_dump(path, f, lo, hi, shape, t):
    """Self-describing text dump of (v, u, q) on a spatial lattice at time t."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    n = len(lo)
    axes = [np.linspace(a, b, k) for a, b, k in zip(lo, hi, shape)]
    x = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    v, u, q = f.evaluate(x, np.full(len(x), float(t)))
    iu = np.triu_indices(n)
    roles = [f"x{i}" for i in range(n)] + [f"v{i}" for i in range(n)] + \
        [f"u{i}{j}" for i, j in zip(*iu)] + ["q"]
    data = np.concatenate([x, v, u[:, iu[0], iu[1]], q[:, None]], axis=1)
    with open(path, "w") as fh:
        fh.write("# eulerlab field dump v1\n")
        fh.write(f"# dimension: {n}\n")
        fh.write(f"# time: {float(t)!r}\n")
        fh.write("# window: " + " ".join(repr(float(a)) for a in lo) + " | " +
                 " ".join(repr(float(b)) for b in hi) + "\n")
        fh.write("# shape: " + " ".join(str(int(k)) for k in shape) + "\n")
        fh.write("# roles: " + " ".join(roles) + "\n")
        for row in data:
            fh.write(" ".join(repr(float(z)) for z in row) + "\n")


def read_field_dump(path):
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                if ":" in line:
                    k, v = line[1:].split(":", 1)
                    meta[k.strip()] = v.strip()
                continue
            rows.append([float(z) for z in line.split()])
    meta["shape"] = tuple(int(k) for k in meta["shape"].split())
    meta["roles"] = meta["roles"].split()
    meta["dimension"] = int(meta["dimension"])
    return meta, np.array(rows)
