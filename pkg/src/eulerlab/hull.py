"""Convex hull of the Euler states of a fixed speed.

The hull is the sublevel set {e <= r^2/2}.  Besides classification this
module finds explicit Caratheodory decompositions and, from them, short
admissible segments with a quantitative length bound.
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .states import (EulerPoint, TracelessSym, energy_density_batch, pack_free,
                     traceless_product_batch, unpack_free)

WEIGHT_FLOOR = 1e-6
MAX_RETRIES = 500
JITTER = 1e-3
BATCH = 48


class Membership(str, Enum):
    INTERIOR = "Interior"
    BOUNDARY = "Boundary"
    OUTSIDE = "Outside"


class PointNotInterior(ValueError):
    pass


class DecompositionFailed(RuntimeError):
    pass


def hull_dim(n):
    """N = n(n+3)/2 - 1, dimension of R^n x S_0^n."""
    return n * (n + 3) // 2 - 1


@dataclass(frozen=True)
class HullQuery:
    point: EulerPoint
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("speed r must be positive")


@dataclass(frozen=True)
class CaratheodoryDecomposition:
    weights: np.ndarray
    generators: np.ndarray
    r: float

    def recombine(self):
        """Return (v, u matrix) of the convex combination."""
        n = self.generators.shape[1]
        v = self.weights @ self.generators
        u = np.einsum("i,ijk->jk", self.weights, _gen_u(self.generators, self.r))
        return v, u


@dataclass(frozen=True)
class AdmissibleSegment:
    midpoint: EulerPoint
    vbar: np.ndarray
    ubar: np.ndarray
    a: np.ndarray
    b: np.ndarray
    r: float
    lam: float

    def endpoints(self):
        v, u = self.midpoint.v, self.midpoint.u.matrix()
        return (v + self.vbar, u + self.ubar), (v - self.vbar, u - self.ubar)


def _gen_u(gens, r):
    n = gens.shape[-1]
    out = gens[..., :, None] * gens[..., None, :]
    out[..., np.arange(n), np.arange(n)] -= r * r / n
    return out


def _classify_value(e, r):
    tol = 1e-10 * r * r
    half = 0.5 * r * r
    if e < half - tol:
        return Membership.INTERIOR
    if abs(e - half) <= tol:
        return Membership.BOUNDARY
    return Membership.OUTSIDE


def classify(q, r=None):
    if r is not None:
        q = HullQuery(q, float(r))
    e = float(energy_density_batch(q.point.v, q.point.u.matrix()))
    return _classify_value(e, q.r)


def classify_batch(v, u, r):
    """Vectorised classification; returns an int array (0 interior, 1 boundary, 2 outside)."""
    e = energy_density_batch(v, u)
    r = np.asarray(r, dtype=float)
    tol = 1e-10 * r * r
    half = 0.5 * r * r
    out = np.full(e.shape, 2)
    out[np.abs(e - half) <= tol] = 1
    out[e < half - tol] = 0
    return out


def min_speed(p):
    e = float(energy_density_batch(p.v, p.u.matrix()))
    return float(np.sqrt(2.0 * max(e, 0.0)))


def _sample_generators(rng, v, u, r, count):
    """Candidate generator sets, shape (count, N+1, n), all of norm r.

    Three samplers are mixed: isotropic, biased toward v/|v|, and concentrated
    on the slab where the supporting functional of the hull at (v,u) is
    nearly maximal.
    """
    n = len(v)
    m = hull_dim(n) + 1
    g = rng.standard_normal((count, m, n))
    mode = np.arange(count) % 4
    vn = np.linalg.norm(v)
    # v-biased sampler
    if vn > 0:
        kappa = rng.uniform(0.0, 6.0, size=count) * vn / r
        sel = mode == 1
        g[sel] += kappa[sel, None, None] * (v / vn)
    # slab sampler around the top eigenvector of v (x) v - u
    w_mat = np.outer(v, v) - u
    evals, evecs = np.linalg.eigh(w_mat)
    w = evecs[:, -1]
    e = 0.5 * n * evals[-1]
    s = float(w @ v)
    gap = max(r * r - 2.0 * e, 1e-12)
    sel = mode >= 2
    k = int(sel.sum())
    if k:
        spread = np.sqrt(gap / n) * rng.uniform(0.3, 3.0, size=(k, 1))
        c = np.clip(s + spread * rng.standard_normal((k, m)), -0.999 * r, 0.999 * r)
        perp = g[sel] - (g[sel] @ w)[..., None] * w
        pn = np.linalg.norm(perp, axis=-1, keepdims=True)
        pn = np.where(pn > 0, pn, 1.0)
        g[sel] = c[..., None] * w + np.sqrt(r * r - c * c)[..., None] * perp / pn
    gn = np.linalg.norm(g, axis=-1, keepdims=True)
    return r * g / gn


def _separate(rng, gens, r):
    """Jitter generators that coincide with another up to sign."""
    for _ in range(10):
        d1 = np.linalg.norm(gens[:, :, None, :] - gens[:, None, :, :], axis=-1)
        d2 = np.linalg.norm(gens[:, :, None, :] + gens[:, None, :, :], axis=-1)
        m = gens.shape[1]
        close = (np.minimum(d1, d2) <= 1e-8) & ~np.eye(m, dtype=bool)
        bad = close.any(axis=-1)
        if not bad.any():
            return gens
        gens[bad] += JITTER * r * rng.standard_normal(gens[bad].shape)
        gens /= np.linalg.norm(gens, axis=-1, keepdims=True) / r
    return gens


def _system(gens, r):
    n = gens.shape[-1]
    cols = np.concatenate([gens, pack_free(_gen_u(gens, r)), np.ones(gens.shape[:-1] + (1,))], axis=-1)
    return np.swapaxes(cols, -1, -2)


def caratheodory_decompose(q, r=None, seed=0, rng=None, method="auto"):
    """Write an interior point as a convex combination of Euler states.

    method "search" samples N+1 generators and solves the barycentric
    system; "moment" builds the combination directly from two-point splits
    along randomly rotated principal directions of the normalised covariance
    (always succeeds for interior points); "auto" tries the search first.
    """
    if r is not None:
        q = HullQuery(q, float(r))
    if classify(q) != Membership.INTERIOR:
        raise PointNotInterior("point is not in the interior of the hull")
    rng = np.random.default_rng(seed) if rng is None else rng
    v, u = q.point.v, q.point.u.matrix()
    if method in ("auto", "search"):
        try:
            return _decompose(rng, v, u, q.r)
        except DecompositionFailed:
            if method == "search":
                raise
    lam, gens = moment_decompose_batch(rng, v[None], u[None], np.array([q.r]))
    return CaratheodoryDecomposition(lam[0], gens[0], float(q.r))


def _decompose(rng, v, u, r):
    n = len(v)
    rhs = np.concatenate([v, pack_free(u), [1.0]])
    scale = max(1.0, r * r)
    tries = 0
    while tries < MAX_RETRIES:
        count = min(BATCH, MAX_RETRIES - tries)
        tries += count
        gens = _separate(rng, _sample_generators(rng, v, u, r, count), r)
        mat = _system(gens, r)
        with np.errstate(all="ignore"):
            try:
                lam = np.linalg.solve(mat, np.broadcast_to(rhs, (count, len(rhs)))[..., None])[..., 0]
            except np.linalg.LinAlgError:
                lam = np.stack([_safe_solve(mm, rhs) for mm in mat])
            res = np.abs(np.einsum("bij,bj->bi", mat, lam) - rhs).max(axis=-1)
        ok = (np.all(lam > WEIGHT_FLOOR, axis=-1) & np.all(lam < 1.0, axis=-1)
              & (res <= 1e-11 * scale) & np.all(np.isfinite(lam), axis=-1))
        if ok.any():
            k = int(np.argmax(ok))
            return CaratheodoryDecomposition(lam[k].copy(), gens[k].copy(), float(r))
    raise DecompositionFailed(f"no valid simplex after {MAX_RETRIES} samples")


def random_rotations(rng, count, n):
    g = rng.standard_normal((count, n, n))
    qm, rm = np.linalg.qr(g)
    return qm * np.sign(np.diagonal(rm, axis1=-2, axis2=-1))[:, None, :]


def moment_decompose_batch(rng, v, u, r):
    """Batched constructive decomposition with 2n generators per point.

    With M = u + (r^2/n) I the second moment and s2 = r^2 - |v|^2, the
    matrix P = (M - v v^T)/s2 has unit trace and is positive definite
    inside the hull.  Writing P = sum_k w_k d_k d_k^T (columns of P^(1/2) O
    for a random rotation O), the chord of the sphere through v along d_k
    carries a two-point measure with mean v and second moment
    v v^T + s2 d_k d_k^T; mixing with weights w_k reproduces (v, u).
    """
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    r = np.broadcast_to(np.asarray(r, dtype=float), v.shape[:1])
    bsz, n = v.shape
    s2 = r * r - np.sum(v * v, axis=-1)
    if np.any(s2 <= 0):
        raise PointNotInterior("|v| >= r")
    cov = u + (r * r / n)[:, None, None] * np.eye(n) - v[:, :, None] * v[:, None, :]
    p = cov / s2[:, None, None]
    evals, evecs = np.linalg.eigh(p)
    if np.any(evals[:, 0] <= 0):
        raise PointNotInterior("covariance is not positive definite")
    root = np.einsum("bij,bj,bkj->bik", evecs, np.sqrt(evals), evecs)
    y = root @ random_rotations(rng, bsz, n)
    w = np.sum(y * y, axis=1)
    d = y / np.sqrt(w)[:, None, :]
    vd = np.einsum("bi,bik->bk", v, d)
    disc = np.sqrt(vd * vd + s2[:, None])
    sp, sm = -vd + disc, -vd - disc
    gp = v[:, :, None] + sp[:, None, :] * d
    gm = v[:, :, None] + sm[:, None, :] * d
    pp = -sm / (sp - sm)
    pm = sp / (sp - sm)
    gens = np.concatenate([np.swapaxes(gp, 1, 2), np.swapaxes(gm, 1, 2)], axis=1)
    lam = np.concatenate([w * pp, w * pm], axis=1)
    # renormalise generator lengths against rounding
    gens *= (r[:, None] / np.linalg.norm(gens, axis=-1))[..., None]
    return lam, gens


def _safe_solve(m, rhs):
    try:
        return np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError:
        return np.full(len(rhs), np.nan)


def segment_from_decomposition(point, dec):
    lam = dec.weights
    gens = dec.generators
    order = np.argsort(-lam, kind="stable")
    i1 = order[0]
    score = lam * np.linalg.norm(gens - gens[i1], axis=-1)
    score[i1] = -1.0
    j = len(score) - 1 - int(np.argmax(score[::-1]))  # largest index on ties
    a, b = gens[j].copy(), gens[i1].copy()
    half = 0.5 * lam[j]
    vbar = half * (a - b)
    ubar = half * (np.outer(a, a) - np.outer(b, b))
    return AdmissibleSegment(point, vbar, ubar, a, b, dec.r, float(lam[j]))


def segment_bound(v, r):
    n = len(v)
    return (r * r - float(v @ v)) / (4.0 * hull_dim(n) * r)


def admissible_segment(q, r=None, seed=0, rng=None, attempts=20, method="auto"):
    if r is not None:
        q = HullQuery(q, float(r))
    if classify(q) != Membership.INTERIOR:
        raise PointNotInterior("point is not in the interior of the hull")
    rng = np.random.default_rng(seed) if rng is None else rng
    v, u = q.point.v, q.point.u.matrix()
    bound = segment_bound(v, q.r)
    for k in range(attempts):
        dec = caratheodory_decompose(q, rng=rng, method=method if k == 0 else "moment")
        seg = segment_from_decomposition(q.point, dec)
        if np.linalg.norm(seg.vbar) < bound:
            continue
        e_plus = energy_density_batch(v + seg.vbar, u + seg.ubar)
        e_minus = energy_density_batch(v - seg.vbar, u - seg.ubar)
        if _classify_value(e_plus, q.r) == Membership.INTERIOR and \
                _classify_value(e_minus, q.r) == Membership.INTERIOR:
            return seg
    raise DecompositionFailed("no segment met the length bound")


def segments_batch(rng, v, u, r, attempts=20, min_spread=0.0):
    """Admissible segments for many interior points at once.

    Returns dict of arrays a, b, lam, vbar, ubar.  Uses the constructive
    decomposition; rows failing the bound or the interior test are redrawn.
    With min_spread > 0, partners with r^2 + a.b < min_spread r^2 (nearly
    antipodal, where the wave potential degenerates) are skipped.
    """
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    r = np.broadcast_to(np.asarray(r, dtype=float), v.shape[:1]).copy()
    bsz, n = v.shape
    if np.any(classify_batch(v, u, r) != 0):
        raise PointNotInterior("some anchor points are not interior")
    out = {"a": np.zeros((bsz, n)), "b": np.zeros((bsz, n)), "lam": np.zeros(bsz),
           "vbar": np.zeros((bsz, n)), "ubar": np.zeros((bsz, n, n))}
    todo = np.arange(bsz)
    bound = (r * r - np.sum(v * v, axis=-1)) / (4.0 * hull_dim(n) * r)
    for _ in range(attempts):
        if len(todo) == 0:
            return out
        lam, gens = moment_decompose_batch(rng, v[todo], u[todo], r[todo])
        i1 = np.argmax(lam, axis=1)  # first maximal index
        rows = np.arange(len(todo))
        score = lam * np.linalg.norm(gens - gens[rows, i1][:, None, :], axis=-1)
        score[rows, i1] = -1.0
        if min_spread > 0:
            s_ab = np.sum(gens * gens[rows, i1][:, None, :], axis=-1) + (r[todo] ** 2)[:, None]
            score[s_ab < min_spread * (r[todo] ** 2)[:, None]] = -1.0
        m = score.shape[1]
        j = m - 1 - np.argmax(score[:, ::-1], axis=1)
        a = gens[rows, j]
        b = gens[rows, i1]
        lj = lam[rows, j]
        vbar = 0.5 * lj[:, None] * (a - b)
        ubar = 0.5 * lj[:, None, None] * (a[:, :, None] * a[:, None, :] - b[:, :, None] * b[:, None, :])
        vt, ut, rt = v[todo], u[todo], r[todo]
        good = (np.linalg.norm(vbar, axis=-1) >= bound[todo])
        good &= score[rows, j] > 0
        good &= classify_batch(vt + vbar, ut + ubar, rt) == 0
        good &= classify_batch(vt - vbar, ut - ubar, rt) == 0
        idx = todo[good]
        out["a"][idx] = a[good]
        out["b"][idx] = b[good]
        out["lam"][idx] = lj[good]
        out["vbar"][idx] = vbar[good]
        out["ubar"][idx] = ubar[good]
        todo = todo[~good]
    if len(todo):
        raise DecompositionFailed(f"{len(todo)} anchors without an admissible segment")
    return out


def extreme_direction(v, u):
    """Two-sided direction (vbar, ubar) at a non-extreme point of the hull.

    In the frame diagonalising v (x) v - u with the smallest eigenvalue last,
    vbar = e_n and ubar = sum_{i<n} v^i (e_i e_n + e_n e_i).  Then
    (v + t vbar) (x) (v + t vbar) - (u + t ubar) differs from v (x) v - u only
    by (2 t v^n + t^2) e_n e_n.
    """
    v = np.asarray(v, dtype=float)
    n = len(v)
    evals, evecs = np.linalg.eigh(np.outer(v, v) - u)
    basis = evecs[:, ::-1]  # descending, smallest eigenvalue last
    vt = basis.T @ v
    vbar_t = np.zeros(n)
    vbar_t[-1] = 1.0
    ubar_t = np.zeros((n, n))
    ubar_t[:-1, -1] = vt[:-1]
    ubar_t[-1, :-1] = vt[:-1]
    return basis @ vbar_t, basis @ ubar_t @ basis.T
