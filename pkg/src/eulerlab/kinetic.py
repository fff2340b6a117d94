"""Exact-structure quadrature of the kinetic energy of atom layers.

For a zero base field, the velocity at time t is a sum of terms
Re[exp(i k.x) S(x)] with S a separable sum of cutoff derivatives, so every
product integral int v_A . v_B over a box factorises into one-dimensional
tables (see `quad.j_tables`).  The tables depend on space only and are
cached; the time dependence enters through the coefficient tensors G.

A nonzero base field falls back to tensor Gauss-Legendre quadrature.
"""
import string

import numpy as np

from .fields import tensor_gl
from .grid import BoxUnion
from .quad import j_tables


def _omega_key(omega):
    return (omega.lo.tobytes(), omega.hi.tobytes())


def _contract(GA, GB, J):
    """sum_p sum_{m,m'} GA[r,p,m] GB[r,p,m'] prod_d J[r,d,m_d,m'_d]."""
    n = J.shape[1]
    L = string.ascii_lowercase
    a = L[:n]
    b = L[n:2 * n]
    T = GA
    cur = list(a)
    for d in range(n):
        src = "rp" + "".join(cur)
        nxt = cur.copy()
        nxt[d] = b[d]
        T = np.einsum(f"{src},r{a[d]}{b[d]}->rp{''.join(nxt)}", T, J[:, d])
        cur = nxt
    return np.sum(T * GB, axis=tuple(range(1, n + 2)))


def _box_rows(lo_a, hi_a, lo_b, hi_b, omega):
    """Intersections of paired cells with each box of omega.

    Returns (pair index, lo, hi) for nonempty intersections.
    """
    lo = np.maximum(lo_a, lo_b)
    hi = np.minimum(hi_a, hi_b)
    rows, los, his = [], [], []
    for blo, bhi in omega.boxes:
        l = np.maximum(lo, blo)
        h = np.minimum(hi, bhi)
        ok = np.all(h > l, axis=1)
        rows.append(np.nonzero(ok)[0])
        los.append(l[ok])
        his.append(h[ok])
    return np.concatenate(rows), np.concatenate(los), np.concatenate(his)


def _tables(layA, ia, layB, ib, lo, hi, refine):
    """J+ and J- tables for row pairs, shape (R, n, 4, 4) each."""
    n = layA.n
    R = len(ia)
    Jp = np.zeros((R, n, 4, 4), complex)
    Jm = np.zeros((R, n, 4, 4), complex)
    if R == 0:
        return Jp, Jm
    cA = layA.centers[ia, :n]
    cB = layB.centers[ib, :n]
    kA = layA.N * layA.eta[ia, :n]
    kB = layB.N * layB.eta[ib, :n]
    for d in range(n):
        args = (lo[:, d], hi[:, d], cA[:, d], layA.h, cB[:, d], layB.h)
        Jp[:, d] = j_tables(*args, kA[:, d] + kB[:, d], refine=refine)
        Jm[:, d] = j_tables(*args, kA[:, d] - kB[:, d], refine=refine)
    return Jp, Jm


def _cell_boxes(layer, idx):
    n = layer.n
    c = layer.centers[idx, :n]
    return c - layer.h / 2, c + layer.h / 2


def self_tables(layer, omega):
    key = ("self", _omega_key(omega))
    if key not in layer.cache:
        idx = np.arange(len(layer))
        lo, hi = _cell_boxes(layer, idx)
        r, l, h = _box_rows(lo, hi, lo, hi, omega)
        tabs = [_tables(layer, r, layer, r, l, h, ref) for ref in (1, 2)]
        layer.cache[key] = (r, tabs)
    return layer.cache[key]


def _pairs(LA, LB):
    """Atom pairs (iA, iB) of two layers whose space-time cells overlap."""
    swap = LA.h < LB.h
    big, small = (LB, LA) if swap else (LA, LB)
    n = big.n
    if len(big) == 0 or len(small) == 0:
        return np.zeros(0, int), np.zeros(0, int)
    c = small.centers
    hs = small.h * (0.5 - 1e-9)
    found_s, found_b = [], []
    for corner in np.ndindex(*(2,) * (n + 1)):
        off = (np.array(corner) * 2 - 1) * hs
        y = c + off
        k = big.locate(y[:, :n], y[:, n])
        ok = k >= 0
        found_s.append(np.nonzero(ok)[0])
        found_b.append(k[ok])
    s = np.concatenate(found_s)
    b = np.concatenate(found_b)
    key = np.unique(np.stack([s, b], axis=1), axis=0)
    s, b = key[:, 0], key[:, 1]
    return (s, b) if swap else (b, s)


def cross_tables(LA, LB, omega):
    key = ("cross", id(LB), _omega_key(omega))
    if key not in LA.cache:
        ia, ib = _pairs(LA, LB)
        loA, hiA = _cell_boxes(LA, ia)
        loB, hiB = _cell_boxes(LB, ib)
        r, l, h = _box_rows(loA, hiA, loB, hiB, omega)
        tabs = [_tables(LA, ia[r], LB, ib[r], l, h, ref) for ref in (1, 2)]
        LA.cache[key] = (ia[r], ib[r], tabs, LB)  # keep LB alive so id() stays unique
    return LA.cache[key]


def _pair_value(GA, GB, Jp, Jm):
    return 0.5 * np.real(_contract(GA, GB, Jp) + _contract(GA, np.conj(GB), Jm))


def layered_kinetic(layers, omega, t):
    """(1/2) int_omega |v(x,t)|^2 for a zero base; returns (value, error estimate)."""
    layers = [L for L in layers if len(L)]
    vals = np.zeros(2)
    active = []
    for L in layers:
        idx, G = L.time_factors(t)
        pos = np.full(len(L), -1)
        pos[idx] = np.arange(len(idx))
        active.append((pos, G))
    for li, L in enumerate(layers):
        pos, G = active[li]
        rows, tabs = self_tables(L, omega)
        sel = pos[rows] >= 0
        if sel.any():
            g = G[pos[rows[sel]]]
            for k, (Jp, Jm) in enumerate(tabs):
                vals[k] += 0.5 * np.sum(_pair_value(g, g, Jp[sel], Jm[sel]))
        for lj in range(li + 1, len(layers)):
            posB, GB = active[lj]
            if not (pos >= 0).any() or not (posB >= 0).any():
                continue
            ia, ib, ctabs, _ = cross_tables(L, layers[lj], omega)
            sel = (pos[ia] >= 0) & (posB[ib] >= 0)
            if not sel.any():
                continue
            ga = G[pos[ia[sel]]]
            gb = GB[posB[ib[sel]]]
            for k, (Jp, Jm) in enumerate(ctabs):
                vals[k] += np.sum(_pair_value(ga, gb, Jp[sel], Jm[sel]))
    return float(vals[1]), float(abs(vals[1] - vals[0]))


def asymptotic_gain(layer, omega, t):
    """(1/4) sum_cells |vbar|^2 int_omega phi(.,t)^2: the N -> infinity energy of a layer."""
    if len(layer) == 0:
        return 0.0
    rows, tabs = self_tables(layer, omega)
    Jm = tabs[1][1]
    ct = layer.centers[rows, -1]
    from .grid import ramp
    rt = np.where(np.abs(t - ct) < layer.h / 2, ramp(t - ct, layer.h)[0], 0.0)
    sp = np.prod(Jm[:, :, 0, 0].real, axis=1)
    vb2 = np.sum(layer.vbar[rows] ** 2, axis=1)
    return float(0.25 * np.sum(vb2 * rt ** 2 * sp))


def brute_kinetic(sub, omega, t, ppw=4.0, min_panels=8, order=6):
    """Tensor Gauss-Legendre (1/2) int |v|^2 at two resolutions (value, error)."""
    kmax = 0.0
    for L in sub.layers:
        if len(L):
            kmax = max(kmax, 2.0 * L.N * float(np.abs(L.eta[:, :-1]).max()))
    hmin = min([L.h for L in sub.layers if len(L)], default=1.0)
    vals = []
    for ref in (1, 2):
        acc = 0.0
        for lo, hi in omega.boxes:
            span = hi - lo
            panels = [max(min_panels * int(np.ceil(s / hmin)) * 8,
                          int(np.ceil(ppw * kmax * s / (2 * np.pi) / order)) + 1) * ref for s in span]
            x, w = tensor_gl(lo, hi, panels, order)
            for s in range(0, len(x), 65536):
                v = sub.velocity(x[s:s + 65536], t)
                acc += 0.5 * float(np.sum(w[s:s + 65536] * np.sum(v * v, axis=1)))
        vals.append(acc)
    return vals[1], abs(vals[1] - vals[0])


def kinetic_integral(sub, omega, t):
    if sub.base is None:
        return layered_kinetic(sub.layers, omega, t)
    return brute_kinetic(sub, omega, t)
