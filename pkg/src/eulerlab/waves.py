"""Constant-pressure plane waves and localized wave atoms.

For |a| = |b|, a != +-b the cubic symbol

    A(xi) = sym(R xi (x) Q(xi) xi),  R = a(x)b - b(x)a,  Q(xi) = xi(x)e - e(x)xi

(e the time direction in R^{n+1}) satisfies A(xi) xi = 0, is symmetric,
trace free and has a zero corner entry, so U = A(d)[phi] solves the lifted
linear system for every scalar phi.  At the direction eta(a,b) it equals
U_a - U_b.

An atom is A(d)[phi N^-3 cos(N eta.y)] with phi a cell cutoff.  It is
evaluated exactly by expanding the third derivatives with the Leibniz rule:

    U(y) = Re[ exp(i N eta.y) * sum_beta K_beta d^beta phi(y) ]

where beta runs over multi-indices of order <= 3 and the complex matrices
K_beta depend only on (a, b, eta, N, amplitude).
"""
from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from math import comb

import numpy as np

from .grid import CutoffProfile, ramp
from .states import ReynoldsTriple, TracelessSym, pack_free, traceless_product_batch


class DegenerateGenerators(ValueError):
    pass


@dataclass(frozen=True)
class WaveGenerators:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, float)
        b = np.asarray(self.b, float)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("generators must be vectors of equal dimension")
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if abs(na - nb) > 1e-12 * max(1.0, na):
            raise DegenerateGenerators("|a| != |b|")
        if min(np.linalg.norm(a - b), np.linalg.norm(a + b)) <= 1e-10:
            raise DegenerateGenerators("a = +-b")


def eta(a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    # |a||b| + a.b without cancellation near b = -a
    c = a + b
    s = 0.5 * (c @ c - (na - nb) ** 2)
    if s <= 1e-12 * na * nb:
        raise DegenerateGenerators("|a||b| + a.b vanishes (b = -a)")
    out = np.empty(len(a) + 1)
    k = -s ** (-2.0 / 3.0)
    out[:-1] = k * (a + b)
    out[-1] = -k * s
    return out


def eta_batch(a, b):
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    c = a + b
    s = 0.5 * (np.sum(c * c, axis=-1) - (na - nb) ** 2)
    if np.any(s <= 1e-12 * na * nb):
        raise DegenerateGenerators("|a||b| + a.b vanishes")
    k = -s ** (-2.0 / 3.0)
    return np.concatenate([k[:, None] * (a + b), (-k * s)[:, None]], axis=1)


def _rmat(a, b):
    n = len(a)
    r = np.zeros((n + 1, n + 1))
    r[:n, :n] = np.outer(a, b) - np.outer(b, a)
    return r


def symbol_eval(a, b, xi):
    """A(xi) as an (n+1)x(n+1) matrix."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    xi = np.asarray(xi, float)
    m = len(xi)
    e = np.zeros(m)
    e[-1] = 1.0
    rx = _rmat(a, b) @ xi
    qx = xi * xi[-1] - e * (xi @ xi)
    return 0.5 * (np.outer(rx, qx) + np.outer(qx, rx))


def symbol_tensor(a, b):
    """Coefficients C[p,q,i,j,k] with A(xi)_pq = sum C xi_i xi_j xi_k (not symmetrised in ijk)."""
    a = np.asarray(a, float)
    m = len(a) + 1
    r = _rmat(a, b)
    eye = np.eye(m)
    e = eye[-1]
    # (Q xi)_q = xi_q xi_m - e_q |xi|^2  ->  coefficient of xi_j xi_k
    qcoef = np.einsum("qj,k->qjk", eye, e) - np.einsum("q,jk->qjk", e, eye)
    t = np.einsum("pi,qjk->pqijk", r, qcoef)
    return 0.5 * (t + np.swapaxes(t, 0, 1))


@lru_cache(maxsize=None)
def multi_indices(m, order):
    """All multi-indices in m variables with total order <= `order` (tuples)."""
    out = [al for al in product(range(order + 1), repeat=m) if sum(al) <= order]
    out.sort(key=lambda al: (sum(al), tuple(-x for x in al)))
    return tuple(out)


def cubic_coefficients(a, b):
    """Map multi-index alpha (|alpha| = 3) -> matrix coefficient of xi^alpha."""
    c = symbol_tensor(a, b)
    m = c.shape[0]
    out = {}
    for i, j, k in product(range(m), repeat=3):
        al = [0] * m
        al[i] += 1
        al[j] += 1
        al[k] += 1
        al = tuple(al)
        out[al] = out.get(al, 0.0) + c[:, :, i, j, k]
    return out


def leibniz_coefficients(a, b, eta_vec, N, amp=1.0):
    """Complex K_beta, shape (len(betas), m, m), for A(d)[phi N^-3 cos(N eta.y)].

    d^gamma [N^-3 cos(N eta.y)] = N^(|gamma|-3) eta^gamma Re(i^|gamma| e^{i N eta.y}).
    """
    m = len(eta_vec)
    betas = multi_indices(m, 3)
    coef = cubic_coefficients(a, b)
    out = np.zeros((len(betas), m, m), dtype=complex)
    for bi, be in enumerate(betas):
        acc = np.zeros((m, m), dtype=complex)
        for al, c in coef.items():
            if any(x < y for x, y in zip(al, be)):
                continue
            ga = tuple(x - y for x, y in zip(al, be))
            g = sum(ga)
            w = float(np.prod([comb(x, y) for x, y in zip(al, be)]))
            w *= float(N) ** (g - 3) * float(np.prod(np.asarray(eta_vec, float) ** np.array(ga)))
            acc += w * (1j ** g) * c
        out[bi] = amp * acc
    return out


def leibniz_coefficients_batch(a, b, eta_vec, N, amp):
    """Batched version over atoms; a, b (M,n), eta (M,n+1), amp (M,)."""
    M, n = a.shape
    m = n + 1
    betas = multi_indices(m, 3)
    alphas = [al for al in multi_indices(m, 3) if sum(al) == 3]
    # symbol coefficient per alpha, per atom
    eye = np.eye(m)
    e = eye[-1]
    qcoef = np.einsum("qj,k->qjk", eye, e) - np.einsum("q,jk->qjk", e, eye)
    r = np.zeros((M, m, m))
    r[:, :n, :n] = a[:, :, None] * b[:, None, :] - b[:, :, None] * a[:, None, :]
    t = np.einsum("Mpi,qjk->Mpqijk", r, qcoef)
    t = 0.5 * (t + np.swapaxes(t, 1, 2))
    amap = {al: k for k, al in enumerate(alphas)}
    cal = np.zeros((M, len(alphas), m, m))
    for i, j, k in product(range(m), repeat=3):
        al = [0] * m
        al[i] += 1
        al[j] += 1
        al[k] += 1
        cal[:, amap[tuple(al)]] += t[:, :, :, i, j, k]
    out = np.zeros((M, len(betas), m, m), dtype=complex)
    for bi, be in enumerate(betas):
        for ai, al in enumerate(alphas):
            if any(x < y for x, y in zip(al, be)):
                continue
            ga = np.array([x - y for x, y in zip(al, be)])
            g = int(ga.sum())
            w = float(np.prod([comb(x, y) for x, y in zip(al, be)]))
            scal = w * float(N) ** (g - 3) * np.prod(eta_vec ** ga, axis=1) * (1j ** g)
            out[:, bi] += (amp * scal)[:, None, None] * cal[:, ai]
    return out


def euler_lift_matrix(a):
    """U_a = [[a o a, a], [a, 0]] as a plain matrix."""
    a = np.asarray(a, float)
    n = len(a)
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = traceless_product_batch(a, a)
    out[:n, n] = a
    out[n, :n] = a
    return out


@dataclass(frozen=True)
class WaveAtom:
    a: np.ndarray
    b: np.ndarray
    eta: np.ndarray
    amp: float
    N: int
    center: np.ndarray  # (n+1,) cell centre
    h: float

    @classmethod
    def make(cls, a, b, amp, N, center, h):
        WaveGenerators(np.asarray(a, float), np.asarray(b, float))
        et = eta(a, b)
        if np.linalg.norm(et[:-1]) <= 1e-10:
            raise DegenerateGenerators("eta parallel to the time axis")
        return cls(np.asarray(a, float), np.asarray(b, float), et, float(amp), int(N),
                   np.asarray(center, float), float(h))

    @property
    def n(self):
        return len(self.a)

    def cutoff(self):
        return CutoffProfile(self.center, self.h)

    def coefficients(self):
        return leibniz_coefficients(self.a, self.b, self.eta, self.N, self.amp)

    def direction(self):
        """Lifted segment direction amp * (U_a - U_b)."""
        return self.amp * (euler_lift_matrix(self.a) - euler_lift_matrix(self.b))


def cutoff_partials(y, center, h, betas):
    """d^beta phi for each beta: shape (P, len(betas))."""
    r = ramp(y - center, h)  # (4, P, m)
    out = np.ones((y.shape[0], len(betas)))
    for bi, be in enumerate(betas):
        for d, k in enumerate(be):
            out[:, bi] *= r[k, :, d]
    return out


def lifted_field(coeffs, phase_vec, N, y, centers, h):
    """Sum_beta Re[e^{i N eta.y} K_beta d^beta phi] for per-point coefficients.

    coeffs (P, B, m, m) complex, phase_vec (P, m) eta per point, y (P, m),
    centers (P, m).  Returns (P, m, m).
    """
    m = y.shape[1]
    betas = multi_indices(m, 3)
    dphi = cutoff_partials(y, centers, h, betas)
    ph = np.exp(1j * N * np.sum(phase_vec * y, axis=1))
    acc = np.einsum("pb,pbij->pij", dphi, coeffs)
    return np.real(ph[:, None, None] * acc)


def atom_field(w, y):
    """Lifted matrix field of an atom at points y (P, n+1)."""
    y = np.atleast_2d(np.asarray(y, float))
    k = w.coefficients()
    P = len(y)
    out = lifted_field(np.broadcast_to(k, (P,) + k.shape), np.broadcast_to(w.eta, y.shape),
                       w.N, y, np.broadcast_to(w.center, y.shape), w.h)
    return out


def atom_eval(w, x, t):
    y = np.concatenate([np.asarray(x, float).ravel(), [float(t)]])
    U = atom_field(w, y[None])[0]
    n = w.n
    u = U[:n, :n]
    u = 0.5 * (u + u.T)
    return ReynoldsTriple(U[:n, n].copy(), TracelessSym(n, pack_free(u)), 0.0)


@dataclass
class AtomResidual:
    divergence: float
    symmetry: float
    corner: float
    trace: float


def _lattice(w, spacing, inner=0.45):
    lo = w.center - inner * w.h
    hi = w.center + inner * w.h
    axes = [np.arange(a, b + 1e-15, spacing) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))


def fd_divergence(field, y, step):
    """Central-difference space-time divergence of a lifted field: rows of sum_j d_j U_ij."""
    m = y.shape[1]
    div = np.zeros((len(y), m))
    for j in range(m):
        e = np.zeros(m)
        e[j] = step
        div += (field(y + e)[:, :, j] - field(y - e)[:, :, j]) / (2.0 * step)
    return div


def atom_residual(w, spacing, step=None, points=None):
    """Max defects of the atom as a solution of the lifted system on a lattice.

    The divergence uses central differences with the given step (default:
    the lattice spacing), so it measures pure stencil error.
    """
    y = _lattice(w, spacing) if points is None else points
    step = spacing if step is None else step
    f = lambda p: atom_field(w, p)
    U = f(y)
    n = w.n
    div = fd_divergence(f, y, step)
    return AtomResidual(
        divergence=float(np.abs(div).max()),
        symmetry=float(np.abs(U - np.swapaxes(U, 1, 2)).max()),
        corner=float(np.abs(U[:, n, n]).max()),
        trace=float(np.abs(np.trace(U, axis1=1, axis2=2)).max()),
    )


def gauss_legendre_panels(lo, hi, panels, order=6):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wts = (half[:, None] * w[None, :]).ravel()
    return pts, wts


def sin_sq_average(box, eta_vec, N, t, order=6, ppw=4):
    """Quadrature of sin^2(N eta.(x,t)) over a spatial box [(lo), (hi)].

    Uses sin^2 = (1 - cos 2 theta)/2 and the product structure of
    exp(2 i N eta.x) over the box, with composite Gauss-Legendre rules of at
    least `ppw` nodes per wavelength on each axis.
    """
    lo = np.asarray(box[0], float)
    hi = np.asarray(box[1], float)
    eta_vec = np.asarray(eta_vec, float)
    if np.linalg.norm(eta_vec[:-1]) == 0:
        raise ValueError("eta must not be parallel to the time axis")
    vol = float(np.prod(hi - lo))
    prod_c = np.exp(2j * N * eta_vec[-1] * t)
    for d in range(len(lo)):
        k = 2.0 * N * eta_vec[d]
        waves = abs(k) * (hi[d] - lo[d]) / (2 * np.pi)
        panels = max(1, int(np.ceil(ppw * waves / order)) + 1)
        x, wt = gauss_legendre_panels(lo[d], hi[d], panels, order)
        prod_c *= np.sum(wt * np.exp(1j * k * x))
    return 0.5 * vol - 0.5 * float(np.real(prod_c))
