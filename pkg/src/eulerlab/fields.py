"""Evaluable fields: energy targets, layers of wave atoms and subsolutions.

A subsolution is a smooth base triple plus any number of atom layers.  Each
layer holds atoms at a common frequency N on the cells of one shifted grid,
so at a given point at most one atom per layer is nonzero and evaluation is
a table lookup followed by the closed-form atom formula.
"""
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .grid import BoxUnion, ShiftedGrid, ramp, ramp_sup_norms
from .states import energy_density_batch, traceless_product_batch
from .waves import eta_batch, leibniz_coefficients_batch, lifted_field, multi_indices, WaveAtom

CHUNK = 8192


@dataclass(frozen=True)
class EnergyTarget:
    """Target energy density ebar(x, t).

    `profile` is set when ebar depends on t only; integrals then skip
    spatial quadrature.
    """
    func: Callable
    profile: Optional[Callable] = None

    @classmethod
    def constant(cls, c=1.0):
        c = float(c)
        return cls.from_profile(lambda t: np.full(np.shape(t), c))

    @classmethod
    def from_profile(cls, prof):
        return cls(lambda x, t: np.asarray(prof(np.broadcast_to(np.asarray(t, float),
                                                                np.shape(x)[:1])), float), prof)

    def __call__(self, x, t):
        x = np.atleast_2d(np.asarray(x, float))
        t = np.broadcast_to(np.asarray(t, float), x.shape[:1])
        return np.asarray(self.func(x, t), float)

    def integral(self, omega, t, panels=8, order=6):
        """int_omega ebar(., t) with a crude error estimate (value, err)."""
        if self.profile is not None:
            return float(self.profile(np.asarray(float(t)))) * omega.measure(), 0.0
        vals = []
        for p in (panels, 2 * panels):
            acc = 0.0
            for lo, hi in omega.boxes:
                x, w = tensor_gl(lo, hi, p, order)
                acc += float(np.sum(w * self(x, t)))
            vals.append(acc)
        return vals[1], abs(vals[1] - vals[0])


def tensor_gl(lo, hi, panels, order=6):
    """Tensor composite Gauss-Legendre nodes/weights on a box."""
    xg, wg = np.polynomial.legendre.leggauss(order)
    if np.isscalar(panels):
        panels = [panels] * len(lo)
    pts, wts = [], []
    for a, b, p in zip(lo, hi, panels):
        e = np.linspace(a, b, int(p) + 1)
        c = 0.5 * (e[1:] + e[:-1])
        hw = 0.5 * (e[1:] - e[:-1])
        pts.append((c[:, None] + hw[:, None] * xg).ravel())
        wts.append((hw[:, None] * wg).ravel())
    grids = np.meshgrid(*pts, indexing="ij")
    wgrid = np.meshgrid(*wts, indexing="ij")
    x = np.stack([g.ravel() for g in grids], axis=1)
    w = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1)
    return x, w


# ---------------------------------------------------------------- atom layers

class AtomLayer:
    """Atoms sharing a frequency N and a cell size h.

    Cells are given by spatial indices `zeta`, time indices `tidx` and parity
    as in `grid.ShiftedGrid`; a, b are the segment generators and `amp` the
    per-atom amplitude (segment half-weight times any shrink factor).
    """

    def __init__(self, h, N, zeta, tidx, a, b, amp, omega0=None, tag=""):
        self.h = float(h)
        self.N = int(N)
        self.zeta = np.asarray(zeta, np.int64)
        self.tidx = np.asarray(tidx, np.int64)
        self.odd = (self.zeta.sum(axis=1) % 2) != 0
        self.a = np.asarray(a, float)
        self.b = np.asarray(b, float)
        self.amp = np.asarray(amp, float)
        self.n = self.zeta.shape[1]
        self.tag = tag
        if omega0 is None:
            omega0 = BoxUnion(np.zeros((0, self.n)), np.zeros((0, self.n)))
        self.grid = ShiftedGrid(self.h, self.n, omega0, (None, None), self.zeta, self.tidx, self.odd)
        self.eta = eta_batch(self.a, self.b) if len(self.a) else np.zeros((0, self.n + 1))
        self._coeffs = None
        self.cache = {}

    def __len__(self):
        return len(self.tidx)

    @property
    def centers(self):
        return self.grid.centers

    @property
    def coeffs(self):
        if self._coeffs is None:
            self._coeffs = leibniz_coefficients_batch(self.a, self.b, self.eta, self.N, self.amp)
        return self._coeffs

    @property
    def vbar(self):
        return self.amp[:, None] * (self.a - self.b)

    @property
    def ubar(self):
        aa = self.a[:, :, None] * self.a[:, None, :]
        bb = self.b[:, :, None] * self.b[:, None, :]
        return self.amp[:, None, None] * (aa - bb)

    def with_frequency(self, N):
        return AtomLayer(self.h, N, self.zeta, self.tidx, self.a, self.b, self.amp,
                         self.grid.omega0, self.tag)

    def with_amplitude(self, amp):
        return AtomLayer(self.h, self.N, self.zeta, self.tidx, self.a, self.b, amp,
                         self.grid.omega0, self.tag)

    def subset(self, keep):
        keep = np.asarray(keep)
        return AtomLayer(self.h, self.N, self.zeta[keep], self.tidx[keep], self.a[keep],
                         self.b[keep], self.amp[keep], self.grid.omega0, self.tag)

    def atom(self, k):
        return WaveAtom(self.a[k], self.b[k], self.eta[k], float(self.amp[k]), self.N,
                        self.centers[k], self.h)

    def time_span(self):
        if len(self) == 0:
            return None
        c = self.centers[:, -1]
        return float(c.min() - self.h / 2), float(c.max() + self.h / 2)

    def locate(self, x, t):
        return self.grid.locate(x, t)

    def lifted(self, x, t):
        """Sum of atom fields at points (x, t); shape (P, n+1, n+1)."""
        x = np.atleast_2d(np.asarray(x, float))
        t = np.broadcast_to(np.asarray(t, float), x.shape[:1])
        m = self.n + 1
        out = np.zeros((len(x), m, m))
        if len(self) == 0:
            return out
        k = self.locate(x, t)
        idx = np.nonzero(k >= 0)[0]
        K = self.coeffs
        for s in range(0, len(idx), CHUNK):
            sel = idx[s:s + CHUNK]
            ks = k[sel]
            y = np.concatenate([x[sel], t[sel, None]], axis=1)
            out[sel] = lifted_field(K[ks], self.eta[ks], self.N, y, self.centers[ks], self.h)
        return out

    def principal(self, x, t):
        """Leading-order model phi sin(N eta.y) amp (U_a - U_b)."""
        x = np.atleast_2d(np.asarray(x, float))
        t = np.broadcast_to(np.asarray(t, float), x.shape[:1])
        m = self.n + 1
        out = np.zeros((len(x), m, m))
        if len(self) == 0:
            return out
        k = self.locate(x, t)
        sel = np.nonzero(k >= 0)[0]
        ks = k[sel]
        y = np.concatenate([x[sel], t[sel, None]], axis=1)
        phi = np.prod(ramp(y - self.centers[ks], self.h)[0], axis=-1)
        s = np.sin(self.N * np.sum(self.eta[ks] * y, axis=1))
        out[sel] = (phi * s * self.amp[ks])[:, None, None] * _lift_diff(self.a[ks], self.b[ks])
        return out

    def remainder_orders(self):
        """Per atom, bounds R_j (j = 1, 2, 3) on the Frobenius sup of the lifted field minus
        its principal part, split by cutoff derivative order; R_j scales as N^-j."""
        if "rem" not in self.cache:
            sup = ramp_sup_norms()[:4] / self.h ** np.arange(4)
            out = np.zeros((len(self), 3))
            for bi, be in enumerate(multi_indices(self.n + 1, 3)):
                j = sum(be)
                if j:
                    k = np.linalg.norm(self.coeffs[:, bi], axis=(1, 2))
                    out[:, j - 1] += k * np.prod([sup[d] for d in be])
            self.cache["rem"] = out
        return self.cache["rem"]

    def remainder_bound(self, N=None):
        """Per-atom remainder bound at frequency N (default: the layer's own)."""
        N = self.N if N is None else N
        return self.remainder_orders() @ (self.N / float(N)) ** np.arange(1, 4)

    def time_factors(self, t):
        """Active atoms at time t and their spatial coefficient tensors.

        Returns (idx, G) with G of shape (len(idx), n, 4, ..., 4): the v-part
        of the atom is Re[exp(i N eta'.x) sum_m G[., p, m] prod_d rho^(m_d)].
        """
        n = self.n
        ct = self.centers[:, -1]
        idx = np.nonzero(np.abs(t - ct) < self.h / 2)[0]
        G = np.zeros((len(idx), n) + (4,) * n, dtype=complex)
        if len(idx) == 0:
            return idx, G
        rt = ramp(t - ct[idx], self.h)  # (4, A)
        Kv = self._kv()[idx]
        for bi, be in enumerate(multi_indices(n + 1, 3)):
            sp = be[:n]
            G[(slice(None), slice(None)) + sp] += Kv[:, bi, :] * rt[be[n]][:, None]
        G *= np.exp(1j * self.N * self.eta[idx, -1] * t).reshape((-1,) + (1,) * (n + 1))
        return idx, G

    def _kv(self):
        if "kv" not in self.cache:
            self.cache["kv"] = np.ascontiguousarray(self.coeffs[:, :, :self.n, self.n])
        return self.cache["kv"]

    def describe(self):
        return {"atoms": len(self), "h": self.h, "N": self.N, "tag": self.tag}


def _lift_diff(a, b):
    """U_a - U_b for rows of generators."""
    n = a.shape[-1]
    out = np.zeros(a.shape[:-1] + (n + 1, n + 1))
    out[..., :n, :n] = traceless_product_batch(a, a) - traceless_product_batch(b, b)
    out[..., :n, n] = a - b
    out[..., n, :n] = a - b
    return out


# ---------------------------------------------------------------- subsolutions

def lift_batch(v, u, q):
    n = v.shape[-1]
    out = np.zeros(v.shape[:-1] + (n + 1, n + 1))
    out[..., :n, :n] = u + q[..., None, None] * np.eye(n)
    out[..., :n, n] = v
    out[..., n, :n] = v
    return out


def unlift_batch(U):
    n = U.shape[-1] - 1
    v = U[..., :n, n].copy()
    blk = 0.5 * (U[..., :n, :n] + np.swapaxes(U[..., :n, :n], -1, -2))
    q = np.trace(blk, axis1=-2, axis2=-1) / n
    u = blk - q[..., None, None] * np.eye(n)
    return v, u, q


@dataclass(frozen=True)
class Subsolution:
    """Base triple plus atom layers on Omega x (t0, t1) with target ebar."""
    omega: BoxUnion
    horizon: tuple
    ebar: EnergyTarget
    layers: tuple = ()
    base: Optional[Callable] = None   # (x, t) -> (v, u, q)
    meta: dict = field(default_factory=dict, compare=False)

    @classmethod
    def zero(cls, omega, horizon=(0.0, 1.0), ebar=None):
        return cls(omega, tuple(horizon), EnergyTarget.constant(1.0) if ebar is None else ebar)

    @property
    def n(self):
        return self.omega.n

    @property
    def T(self):
        return self.horizon[1] - self.horizon[0]

    def atom_count(self):
        return sum(len(L) for L in self.layers)

    def atoms(self):
        for L in self.layers:
            for k in range(len(L)):
                yield L.atom(k)

    def add_layer(self, layer):
        return replace(self, layers=self.layers + (layer,))

    def finest_h(self):
        hs = [L.h for L in self.layers if len(L)]
        return min(hs) if hs else None

    def base_lifted(self, x, t):
        x = np.atleast_2d(np.asarray(x, float))
        t = np.broadcast_to(np.asarray(t, float), x.shape[:1])
        m = self.n + 1
        if self.base is None:
            return np.zeros((len(x), m, m))
        v, u, q = self.base(x, t)
        return lift_batch(np.asarray(v, float), np.asarray(u, float), np.asarray(q, float))

    def lifted(self, x, t):
        x = np.atleast_2d(np.asarray(x, float))
        t = np.broadcast_to(np.asarray(t, float), x.shape[:1])
        out = self.base_lifted(x, t)
        for L in self.layers:
            out += L.lifted(x, t)
        return out

    def evaluate(self, x, t):
        """(v, u, q) at points; u is the trace-free part, q the trace share."""
        return unlift_batch(self.lifted(x, t))

    def velocity(self, x, t):
        return self.evaluate(x, t)[0]

    def energy(self, x, t):
        v, u, _ = self.evaluate(x, t)
        return energy_density_batch(v, u)
