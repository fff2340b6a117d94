"""One-dimensional oscillatory integrals of products of cell profiles.

The building block is

    J(kappa)[m, m'] = int_lo^hi exp(i kappa x) rho_A^(m)(x - cA) rho_B^(m')(x - cB) dx

for m, m' = 0..3, where rho is the cell profile of `grid.ramp`.  The
interval is split at the plateau and support edges of both profiles;
plateau-plateau pieces are integrated in closed form, pieces touching a
ramp with composite Gauss-Legendre rules.
"""
import numpy as np

from .grid import EDGE, PLATEAU, ramp

GL_ORDER = 6


def _gl(order=GL_ORDER):
    return np.polynomial.legendre.leggauss(order)


def _exp_integral(kappa, a, b):
    """int_a^b exp(i kappa x) dx, vectorised, stable near kappa = 0."""
    small = np.abs(kappa * (b - a)) < 1e-6
    ks = np.where(small, 1.0, kappa)
    big = (np.exp(1j * ks * b) - np.exp(1j * ks * a)) / (1j * ks)
    mid = 0.5 * (a + b)
    ln = b - a
    approx = np.exp(1j * kappa * mid) * ln * (1.0 - (kappa * ln) ** 2 / 24.0)
    return np.where(small, approx, big)


def _state(mid, c, h):
    """0 zero, 1 ramp, 2 plateau."""
    d = np.abs(mid - c)
    return np.where(d <= PLATEAU * h, 2, np.where(d < EDGE * h, 1, 0))


def j_tables(lo, hi, cA, hA, cB, hB, kappa, ppw=4.0, min_panels=32, refine=1):
    """Batched J tables, shape (rows, 4, 4) complex.  All inputs are 1-D arrays (or scalars).

    Rows are grouped by their geometry relative to cA; the profile products
    at the quadrature nodes are computed once per group and the per-row
    phases applied as a matrix product.
    """
    lo, hi, cA, hA, cB, hB, kappa = np.broadcast_arrays(*[np.asarray(x, float) for x in
                                                          (lo, hi, cA, hA, cB, hB, kappa)])
    rows = lo.shape[0]
    out = np.zeros((rows, 4, 4), dtype=complex)
    if rows == 0:
        return out
    geo = np.stack([lo - cA, hi - cA, cB - cA, hA, hB], axis=1)
    scale = np.maximum(hA, hB)
    key = np.round(geo / scale[:, None] * 1e9).astype(np.int64)
    key = np.concatenate([key, np.round(np.log2(scale) * 1e6).astype(np.int64)[:, None]], axis=1)
    _, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    order = np.argsort(inv, kind="stable")
    bounds = np.flatnonzero(np.diff(inv[order])) + 1
    for grp in np.split(order, bounds):
        g0 = grp[0]
        out[grp] = _group(geo[g0], kappa[grp], cA[grp], ppw, min_panels, refine)
    return out


def _group(geo, kappa, shift, ppw, min_panels, refine):
    """J tables for rows sharing local geometry (lo, hi, cB, hA, hB relative to cA = 0)."""
    lo, hi, cb, ha, hb = geo
    pts = np.clip([lo, hi, -PLATEAU * ha, PLATEAU * ha, -EDGE * ha, EDGE * ha,
                   cb - PLATEAU * hb, cb + PLATEAU * hb, cb - EDGE * hb, cb + EDGE * hb], lo, hi)
    pts = np.sort(pts)
    R = len(kappa)
    acc = np.zeros((R, 16), dtype=complex)
    xg, wg = _gl()
    kmax = float(np.abs(kappa).max())
    nodes, weights = [], []
    for a, b in zip(pts[:-1], pts[1:]):
        if b <= a:
            continue
        mid = 0.5 * (a + b)
        sa = _state(mid, 0.0, ha)
        sb = _state(mid, cb, hb)
        if sa == 0 or sb == 0:
            continue
        if sa == 2 and sb == 2:
            acc[:, 0] += _exp_integral(kappa, np.full(R, a), np.full(R, b))
            continue
        waves = kmax * (b - a) / (2 * np.pi)
        panels = int(max(min_panels, np.ceil(ppw * waves / GL_ORDER) + 1)) * refine
        e = np.linspace(a, b, panels + 1)
        c = 0.5 * (e[1:] + e[:-1])
        hw = 0.5 * (e[1:] - e[:-1])
        nodes.append((c[:, None] + hw[:, None] * xg).ravel())
        weights.append((hw[:, None] * wg).ravel())
    if nodes:
        x = np.concatenate(nodes)
        w = np.concatenate(weights)
        ra = ramp(x, ha)
        rb = ramp(x - cb, hb)
        prod = (ra[:, None, :] * rb[None, :, :]).reshape(16, -1) * w  # (16, Q)
        for s in range(0, R, 4096):
            ph = np.exp(1j * np.outer(kappa[s:s + 4096], x))
            acc[s:s + 4096] += ph @ prod.T
    acc *= np.exp(1j * kappa * shift)[:, None]
    return acc.reshape(R, 4, 4)


def profile_square_integral(h, lo=None, hi=None, c=0.0):
    """int rho(x-c)^2 over [lo,hi] (defaults to the whole support)."""
    lo = c - EDGE * h if lo is None else lo
    hi = c + EDGE * h if hi is None else hi
    j = j_tables(np.array([lo]), np.array([hi]), np.array([c]), np.array([h]),
                 np.array([c]), np.array([h]), np.array([0.0]), min_panels=16)
    return float(j[0, 0, 0].real)


def j_rows(lo, hi, cA, hA, cB, hB, kappa, ppw=4.0, min_panels=32, refine=1, chunk=96):
    """J tables for rows of arbitrary geometry, shape (rows, 4, 4).

    Same integral as `j_tables`, vectorised over rows instead of grouped:
    every row is split at its ten profile breakpoints and each piece gets the
    same number of Gauss-Legendre panels.
    """
    lo, hi, cA, hA, cB, hB, kappa = np.broadcast_arrays(*[np.asarray(x, float) for x in
                                                          (lo, hi, cA, hA, cB, hB, kappa)])
    R = lo.shape[0]
    out = np.zeros((R, 4, 4), dtype=complex)
    if R == 0:
        return out
    pts = np.stack([lo, hi, cA - PLATEAU * hA, cA + PLATEAU * hA, cA - EDGE * hA, cA + EDGE * hA,
                    cB - PLATEAU * hB, cB + PLATEAU * hB, cB - EDGE * hB, cB + EDGE * hB], axis=1)
    pts = np.sort(np.clip(pts, lo[:, None], hi[:, None]), axis=1)
    a, b = pts[:, :-1], pts[:, 1:]
    waves = float(np.max(np.abs(kappa)[:, None] * (b - a))) / (2 * np.pi)
    q = int(max(min_panels, np.ceil(ppw * waves / GL_ORDER) + 1)) * refine
    xg, wg = _gl()
    u = np.linspace(0.0, 1.0, q + 1)
    mid = 0.5 * (u[1:] + u[:-1])
    half = 0.5 * (u[1:] - u[:-1])
    tnode = (mid[:, None] + half[:, None] * xg).ravel()   # (q*order,) in [0,1]
    tw = (half[:, None] * wg).ravel()
    for s in range(0, R, chunk):
        sl = slice(s, s + chunk)
        span = (b[sl] - a[sl])[:, :, None]
        x = (a[sl][:, :, None] + span * tnode).reshape(len(span), -1)
        w = (span * tw).reshape(len(span), -1)
        ra = ramp(x - cA[sl, None], hA[sl, None])
        rb = ramp(x - cB[sl, None], hB[sl, None])
        ph = np.exp(1j * kappa[sl, None] * x) * w
        out[sl] = np.einsum("arq,brq,rq->rab", ra, rb, ph)
    return out


def profile_moments(lo, hi, c, h, panels=16, order=GL_ORDER):
    """int_lo^hi rho^(m)(x - c) dx for m = 0..3, rows broadcast; returns ((rows, 4), err).

    Derivatives integrate exactly to boundary differences; m = 0 uses
    Gauss-Legendre on the pieces between breakpoints at two resolutions.
    """
    lo, hi, c, h = np.broadcast_arrays(*[np.atleast_1d(np.asarray(x, float)) for x in (lo, hi, c, h)])
    hi = np.maximum(hi, lo)
    R = len(lo)
    out = np.zeros((R, 4))
    rl = ramp(lo - c, h)
    rh = ramp(hi - c, h)
    out[:, 1:] = (rh[:3] - rl[:3]).T
    pts = np.stack([lo, hi, c - PLATEAU * h, c + PLATEAU * h, c - EDGE * h, c + EDGE * h], axis=1)
    pts = np.sort(np.clip(pts, lo[:, None], hi[:, None]), axis=1)
    a, b = pts[:, :-1], pts[:, 1:]
    xg, wg = _gl(order)
    vals = []
    for p in (panels, 2 * panels):
        u = np.linspace(0.0, 1.0, p + 1)
        mid = 0.5 * (u[1:] + u[:-1])
        half = 0.5 * (u[1:] - u[:-1])
        tn = (mid[:, None] + half[:, None] * xg).ravel()
        tw = (half[:, None] * wg).ravel()
        span = (b - a)[:, :, None]
        x = a[:, :, None] + span * tn
        vals.append(np.sum(ramp(x - c[:, None, None], h[:, None, None])[0] * span * tw, axis=(1, 2)))
    out[:, 0] = vals[1]
    return out, np.abs(vals[1] - vals[0])
