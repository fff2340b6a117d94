"""Parity-shifted space-time grid with smooth cell cutoffs.

Spatial cubes Q_zeta = zeta h + [-h/2, h/2]^n.  The time slab of a cell is
[ih, (i+1)h] when |zeta| = sum(zeta) is even and [(i-1/2)h, (i+1/2)h] when
odd, so neighbouring columns are staggered by h/2.  Each cell carries a
tensor-product cutoff equal to 1 on the concentric 3/4-scaled box.
"""
from dataclasses import dataclass, field

import numpy as np

PLATEAU = 3.0 / 8.0
EDGE = 0.5
_TOL = 1e-12


class EmptyGrid(ValueError):
    pass


class GridPrecondition(ValueError):
    pass


# ---------------------------------------------------------------- domains

@dataclass(frozen=True)
class BoxUnion:
    """Finite union of axis-aligned boxes with pairwise disjoint interiors."""
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def box(cls, lo, hi):
        return cls(np.atleast_2d(np.asarray(lo, float)), np.atleast_2d(np.asarray(hi, float)))

    @classmethod
    def from_boxes(cls, boxes):
        lo = np.array([b[0] for b in boxes], float)
        hi = np.array([b[1] for b in boxes], float)
        return cls(lo, hi)

    @property
    def n(self):
        return self.lo.shape[1]

    @property
    def boxes(self):
        return list(zip(self.lo, self.hi))

    def measure(self):
        return float(np.prod(self.hi - self.lo, axis=1).sum())

    def bounds(self):
        return self.lo.min(axis=0), self.hi.max(axis=0)

    def diameter(self):
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def perimeter(self):
        """(n-1)-measure of the boundary; shared faces between boxes cancel."""
        total = 0.0
        k = len(self.lo)
        for b in range(k):
            side = self.hi[b] - self.lo[b]
            for d in range(self.n):
                face = np.prod(np.delete(side, d))
                total += 2.0 * face
        # subtract shared faces counted from both sides
        for b in range(k):
            for c in range(b + 1, k):
                for d in range(self.n):
                    touch = (abs(self.hi[b, d] - self.lo[c, d]) < _TOL or
                             abs(self.hi[c, d] - self.lo[b, d]) < _TOL)
                    if not touch:
                        continue
                    lo = np.maximum(np.delete(self.lo[b], d), np.delete(self.lo[c], d))
                    hi = np.minimum(np.delete(self.hi[b], d), np.delete(self.hi[c], d))
                    total -= 2.0 * float(np.prod(np.clip(hi - lo, 0, None)))
        return total

    def contains(self, x, closed=False):
        x = np.atleast_2d(x)
        if closed:
            inside = (x[:, None, :] >= self.lo - _TOL) & (x[:, None, :] <= self.hi + _TOL)
        else:
            inside = (x[:, None, :] > self.lo) & (x[:, None, :] < self.hi)
        return inside.all(axis=-1).any(axis=-1)

    def overlap(self, lo, hi):
        """Measure of [lo,hi] (arrays of shape (m,n)) intersected with the union."""
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        a = np.maximum(lo[:, None, :], self.lo)
        b = np.minimum(hi[:, None, :], self.hi)
        return np.prod(np.clip(b - a, 0.0, None), axis=-1).sum(axis=-1)

    def shrink(self, margin):
        """Box-wise inward offset; boxes that vanish are dropped."""
        lo = self.lo + margin
        hi = self.hi - margin
        keep = np.all(hi > lo, axis=1)
        if not keep.any():
            return BoxUnion(np.zeros((0, self.n)), np.zeros((0, self.n)))
        return BoxUnion(lo[keep], hi[keep])

    def sample(self, rng, count):
        vols = np.prod(self.hi - self.lo, axis=1)
        which = rng.choice(len(vols), size=count, p=vols / vols.sum())
        return self.lo[which] + rng.random((count, self.n)) * (self.hi - self.lo)[which]


# ---------------------------------------------------------------- 1-D profile

def smooth_step(u):
    """S and its first three derivatives for S = f(u)/(f(u)+f(1-u)), f = exp(-1/s).

    Returns an array of shape (4,) + u.shape.  S is 0 for u <= 0, 1 for u >= 1.
    """
    u = np.asarray(u, dtype=float)
    a = _f_derivs(u)
    b = _f_derivs(1.0 - u)
    b[1] *= -1.0
    b[3] *= -1.0
    d = a + b
    with np.errstate(all="ignore"):
        w0 = 1.0 / d[0]
        w1 = -d[1] * w0 ** 2
        w2 = (2.0 * d[1] ** 2 - d[0] * d[2]) * w0 ** 3
        w3 = (-6.0 * d[1] ** 3 + 6.0 * d[0] * d[1] * d[2] - d[0] ** 2 * d[3]) * w0 ** 4
    out = np.empty((4,) + u.shape)
    out[0] = a[0] * w0
    out[1] = a[1] * w0 + a[0] * w1
    out[2] = a[2] * w0 + 2.0 * a[1] * w1 + a[0] * w2
    out[3] = a[3] * w0 + 3.0 * a[2] * w1 + 3.0 * a[1] * w2 + a[0] * w3
    lo = u <= 0.0
    hi = u >= 1.0
    out[:, lo] = 0.0
    out[:, hi] = 0.0
    out[0, hi] = 1.0
    return out


def _f_derivs(s):
    out = np.zeros((4,) + s.shape)
    pos = s > 0
    sp = np.where(pos, s, 1.0)
    with np.errstate(all="ignore"):
        f = np.where(pos, np.exp(-1.0 / sp), 0.0)
        out[0] = f
        out[1] = f / sp ** 2
        out[2] = f * (1.0 - 2.0 * sp) / sp ** 4
        out[3] = f * (6.0 * sp * sp - 6.0 * sp + 1.0) / sp ** 6
    out[:, ~pos] = 0.0
    return out


def ramp(s, h):
    """Cell profile along one axis, centred at 0: derivatives 0..3, shape (4,)+s.shape.

    Equal to 1 for |s| <= 3h/8, 0 for |s| >= h/2, strictly monotone between.
    """
    s = np.asarray(s, dtype=float)
    w = (EDGE - PLATEAU) * h
    u = (EDGE * h - np.abs(s)) / w
    st = smooth_step(u)
    sgn = np.where(s >= 0, 1.0, -1.0)
    k = -sgn / w
    st[1] *= k
    st[2] *= k * k
    st[3] *= k ** 3
    return st


_SUP = []


def ramp_sup_norms():
    """Upper bounds for sup |rho^(m)|, m = 0..4, of the unit-width ramp."""
    if not _SUP:
        s = np.linspace(-EDGE, EDGE, 800001)
        r = ramp(s, 1.0)
        d4 = np.abs(np.gradient(r[3], s)).max()
        _SUP.append(1.01 * np.append(np.abs(r).max(axis=1), d4))
    return _SUP[0]


# ---------------------------------------------------------------- cutoffs

@dataclass(frozen=True)
class CutoffProfile:
    center: np.ndarray  # (n+1,) space-time centre
    h: float

    def box(self):
        return self.center - EDGE * self.h, self.center + EDGE * self.h

    def c3_norm(self):
        """Max over derivative orders <= 3 of the sup of partial derivatives."""
        s = np.linspace(-EDGE * self.h, EDGE * self.h, 4001)
        r = np.abs(ramp(s, self.h)).max(axis=1)
        # mixed partials are products of 1-D factors, each <= its own max (r[0] = 1)
        best = 1.0
        for k in range(1, 4):
            best = max(best, _max_product(r, k, len(self.center)))
        return best


def _max_product(r, order, dims):
    from itertools import combinations_with_replacement
    best = 0.0
    for combo in combinations_with_replacement(range(dims), order):
        counts = np.bincount(combo, minlength=dims)
        best = max(best, float(np.prod([r[c] for c in counts])))
    return best


def cutoff_eval(c, y, order=0):
    """Value or analytic derivative tensor of the cutoff at space-time points.

    y has shape (..., n+1).  order 0 gives shape (...), order k gives
    (...,) + (n+1,)*k.
    """
    y = np.asarray(y, dtype=float)
    if order not in (0, 1, 2, 3):
        raise ValueError("order must be 0..3")
    r = ramp(y - c.center, c.h)  # (4, ..., n+1)
    dims = y.shape[-1]
    base = r[0]
    if order == 0:
        return np.prod(base, axis=-1)
    from itertools import product
    out = np.empty(y.shape[:-1] + (dims,) * order)
    for idx in product(range(dims), repeat=order):
        counts = np.bincount(idx, minlength=dims)
        val = np.ones(y.shape[:-1])
        for d in range(dims):
            val = val * r[counts[d]][..., d]
        out[(Ellipsis,) + idx] = val
    return out


# ---------------------------------------------------------------- grid

@dataclass
class ShiftedGrid:
    h: float
    n: int
    omega0: BoxUnion
    window: tuple
    zeta: np.ndarray      # (M, n) integer spatial indices
    tidx: np.ndarray      # (M,) integer time index i
    odd: np.ndarray       # (M,) parity of |zeta|
    spatial: np.ndarray = field(default=None)  # (S, n) distinct zeta with Q_zeta in Omega_0

    @property
    def size(self):
        return len(self.tidx)

    @property
    def centers(self):
        ct = np.where(self.odd, self.tidx * self.h, (self.tidx + 0.5) * self.h)
        return np.concatenate([self.zeta * self.h, ct[:, None]], axis=1)

    @property
    def anchors(self):
        """Anchor points (zeta h, i h) of every cell, shape (M, n+1)."""
        return np.concatenate([self.zeta * self.h, (self.tidx * self.h)[:, None]], axis=1)

    def time_interval(self):
        lo = np.where(self.odd, (self.tidx - 0.5) * self.h, self.tidx * self.h)
        return lo, lo + self.h

    def profile(self, k):
        return CutoffProfile(self.centers[k], self.h)

    def locate(self, x, t):
        """Index of the cell containing (x,t) (interior-biased), -1 if none."""
        x = np.atleast_2d(x)
        t = np.broadcast_to(np.asarray(t, float), x.shape[:1])
        z = np.rint(x / self.h).astype(np.int64)
        odd = (z.sum(axis=1) % 2) != 0
        i = np.where(odd, np.floor(t / self.h + 0.5), np.floor(t / self.h)).astype(np.int64)
        return self._lookup(z, i)

    def _key_table(self):
        if getattr(self, "_table", None) is None:
            self._zmin = self.zeta.min(axis=0) if self.size else np.zeros(self.n, np.int64)
            zspan = (self.zeta.max(axis=0) - self._zmin + 1) if self.size else np.ones(self.n, np.int64)
            self._imin = int(self.tidx.min()) if self.size else 0
            ispan = int(self.tidx.max() - self._imin + 1) if self.size else 1
            self._shape = tuple(int(s) for s in zspan) + (ispan,)
            table = np.full(self._shape, -1, dtype=np.int64)
            idx = tuple((self.zeta - self._zmin).T) + (self.tidx - self._imin,)
            table[idx] = np.arange(self.size)
            self._table = table
        return self._table

    def _lookup(self, z, i):
        table = self._key_table()
        zz = z - self._zmin
        ii = i - self._imin
        ok = np.all((zz >= 0) & (zz < np.array(self._shape[:-1])), axis=1) & (ii >= 0) & (ii < self._shape[-1])
        out = np.full(len(i), -1, dtype=np.int64)
        if ok.any():
            out[ok] = table[tuple(zz[ok].T) + (ii[ok],)]
        return out

    def phi_h(self, x, t):
        """Aggregate cutoff: sum over grid cells (cells have disjoint interiors)."""
        x = np.atleast_2d(x)
        t = np.broadcast_to(np.asarray(t, float), x.shape[:1])
        k = self.locate(x, t)
        out = np.zeros(len(k))
        ok = k >= 0
        if ok.any():
            y = np.concatenate([x[ok], t[ok, None]], axis=1)
            r = ramp(y - self.centers[k[ok]], self.h)[0]
            out[ok] = np.prod(r, axis=-1)
        return out


def build_grid(omega0, eps, T, h, t_window=None):
    """Cells C_{zeta,i} inside Omega_0 x [eps/2, T - eps/2] (or a given window)."""
    if not (0.0 < h < eps / 2.0):
        raise GridPrecondition("need 0 < h < eps/2")
    w0, w1 = (eps / 2.0, T - eps / 2.0) if t_window is None else t_window
    spatial = spatial_cells(omega0, h)
    if len(spatial) == 0:
        raise EmptyGrid("no spatial cube fits in the domain")
    odd = (spatial.sum(axis=1) % 2) != 0
    zs, ts, os_ = [], [], []
    i_even = np.arange(int(np.ceil(w0 / h - _TOL)), int(np.floor(w1 / h - 1 + _TOL)) + 1)
    i_odd = np.arange(int(np.ceil(w0 / h + 0.5 - _TOL)), int(np.floor(w1 / h - 0.5 + _TOL)) + 1)
    for par, irange in ((False, i_even), (True, i_odd)):
        sel = spatial[odd == par]
        if len(sel) == 0 or len(irange) == 0:
            continue
        zs.append(np.repeat(sel, len(irange), axis=0))
        ts.append(np.tile(irange, len(sel)))
        os_.append(np.full(len(sel) * len(irange), par))
    if not zs:
        raise EmptyGrid("no cell fits in the space-time window")
    zeta = np.concatenate(zs).astype(np.int64)
    tidx = np.concatenate(ts).astype(np.int64)
    oddv = np.concatenate(os_)
    order = np.lexsort((tidx,) + tuple(zeta.T[::-1]))
    return ShiftedGrid(float(h), omega0.n, omega0, (float(w0), float(w1)),
                       zeta[order], tidx[order], oddv[order], spatial)


def spatial_cells(omega0, h):
    lo, hi = omega0.bounds()
    zlo = np.floor(lo / h - 1).astype(int)
    zhi = np.ceil(hi / h + 1).astype(int)
    axes = [np.arange(a, b + 1) for a, b in zip(zlo, zhi)]
    z = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, omega0.n)
    clo = z * h - h / 2.0
    chi = z * h + h / 2.0
    full = omega0.overlap(clo, chi) >= h ** omega0.n * (1.0 - 1e-9)
    return z[full].astype(np.int64)


# ---------------------------------------------------------------- Omega/tau sets

@dataclass
class OmegaTau:
    nu: int
    h: float
    zeta: np.ndarray  # spatial indices with the right parity

    def measure(self):
        return len(self.zeta) * (2 * PLATEAU * self.h) ** self.zeta.shape[1]

    def contains_x(self, x):
        x = np.atleast_2d(x)
        z = np.rint(x / self.h).astype(np.int64)
        near = np.all(np.abs(x - z * self.h) <= PLATEAU * self.h + 1e-15, axis=1)
        keys = {tuple(k) for k in self.zeta}
        member = np.array([tuple(k) in keys for k in z], dtype=bool)
        return near & member

    def contains_t(self, t):
        f = np.mod(np.asarray(t, float) / self.h, 1.0)
        if self.nu == 1:
            return (f >= 0.25) & (f < 0.75)
        return (f < 0.25) | (f >= 0.75)


def omega_tau_sets(g, nu):
    if nu not in (1, 2):
        raise ValueError("nu must be 1 or 2")
    odd = (g.spatial.sum(axis=1) % 2) != 0
    sel = g.spatial[odd] if nu == 2 else g.spatial[~odd]
    return OmegaTau(nu, g.h, sel)


# ---------------------------------------------------------------- deficit

@dataclass
class DeficitStep:
    grid: ShiftedGrid
    values: np.ndarray  # per cell E_h(zeta h, i h)

    def at(self, x, t):
        k = self.grid.locate(x, t)
        return np.where(k >= 0, self.values[np.maximum(k, 0)], 0.0)

    def omega_integral(self, t, nu, power=1):
        """int over Omega^h_nu of |E_h(x,t)|^power."""
        ot = omega_tau_sets(self.grid, nu)
        if len(ot.zeta) == 0:
            return 0.0
        x = ot.zeta * self.grid.h
        k = self.grid.locate(x, np.full(len(x), float(t)))
        vals = np.abs(np.where(k >= 0, self.values[np.maximum(k, 0)], 0.0)) ** power
        return float(vals.sum() * (2 * PLATEAU * self.grid.h) ** self.grid.n)


def deficit(g, v, ebar):
    """E_h per cell from callables v(x,t) -> (m,n) and ebar(x,t) -> (m,)."""
    a = g.anchors
    x, t = a[:, :-1], a[:, -1]
    vv = np.asarray(v(x, t), dtype=float)
    return DeficitStep(g, 0.5 * np.sum(vv * vv, axis=1) - np.asarray(ebar(x, t), dtype=float))
