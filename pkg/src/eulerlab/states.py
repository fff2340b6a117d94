"""Tensor algebra of the relaxed Euler system.

Velocities are plain numpy vectors.  Trace-free symmetric matrices carry
their free entries only, the last diagonal entry is rebuilt from the trace
condition.  Batched helpers (``*_batch``) accept leading axes and are what
the field code uses internally.
"""
from dataclasses import dataclass

import numpy as np

SYM_TOL = 1e-12
JACOBI_TOL = 1e-13
JACOBI_SWEEPS = 100


class DimensionError(ValueError):
    pass


class SymmetryError(ValueError):
    pass


def as_velocity(v):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] < 2:
        raise DimensionError(f"velocity must be a vector with n >= 2, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("velocity has non-finite components")
    return v


class TracelessSym:
    """Symmetric n x n matrix with zero trace.

    Stored as the strict upper triangle plus the first n-1 diagonal
    entries; the last diagonal entry is minus their sum.
    """

    __slots__ = ("n", "free")

    def __init__(self, n, free):
        free = np.asarray(free, dtype=float)
        if free.shape != (n * (n + 1) // 2 - 1,):
            raise DimensionError("wrong number of free entries")
        self.n = int(n)
        self.free = free

    @classmethod
    def from_matrix(cls, m, tol=SYM_TOL):
        m = np.asarray(m, dtype=float)
        n = m.shape[0]
        if m.shape != (n, n):
            raise DimensionError("matrix must be square")
        scale = max(1.0, float(np.max(np.abs(m))))
        if np.max(np.abs(m - m.T)) > tol * scale:
            raise SymmetryError("matrix is not symmetric")
        if abs(np.trace(m)) > 1e-12 * scale * n:
            raise ValueError("matrix is not trace free")
        return cls(n, pack_free(m))

    def matrix(self):
        return unpack_free(self.free, self.n)

    def __array__(self, dtype=None, copy=None):
        m = self.matrix()
        return m if dtype is None else m.astype(dtype)

    def __add__(self, other):
        return TracelessSym(self.n, self.free + other.free)

    def __sub__(self, other):
        return TracelessSym(self.n, self.free - other.free)

    def __mul__(self, s):
        return TracelessSym(self.n, self.free * float(s))

    __rmul__ = __mul__

    def __repr__(self):
        return f"TracelessSym({self.matrix().tolist()})"


def pack_free(m):
    """Free coordinates of trace-free symmetric matrices (leading axes kept)."""
    m = np.asarray(m, dtype=float)
    n = m.shape[-1]
    iu = np.triu_indices(n, 1)
    return np.concatenate([m[..., np.arange(n - 1), np.arange(n - 1)], m[..., iu[0], iu[1]]], axis=-1)


def unpack_free(free, n):
    free = np.asarray(free, dtype=float)
    out = np.zeros(free.shape[:-1] + (n, n))
    d = free[..., : n - 1]
    out[..., np.arange(n - 1), np.arange(n - 1)] = d
    out[..., n - 1, n - 1] = -d.sum(axis=-1)
    iu = np.triu_indices(n, 1)
    out[..., iu[0], iu[1]] = free[..., n - 1:]
    out[..., iu[1], iu[0]] = free[..., n - 1:]
    return out


@dataclass(frozen=True)
class EulerPoint:
    v: np.ndarray
    u: TracelessSym

    def __post_init__(self):
        if self.u.n != len(self.v):
            raise DimensionError("v and u dimensions differ")

    @property
    def n(self):
        return len(self.v)

    @classmethod
    def make(cls, v, u):
        v = as_velocity(v)
        if not isinstance(u, TracelessSym):
            u = TracelessSym.from_matrix(u)
        return cls(v, u)


@dataclass(frozen=True)
class ReynoldsTriple:
    v: np.ndarray
    u: TracelessSym
    q: float = 0.0


def traceless_product(v, w):
    v = as_velocity(v)
    w = as_velocity(w)
    if v.shape != w.shape:
        raise DimensionError("dimension mismatch")
    return TracelessSym(len(v), pack_free(traceless_product_batch(v, w)))


def traceless_product_batch(v, w):
    """Matrix form of v o w for arrays of shape (..., n)."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    n = v.shape[-1]
    outer = 0.5 * (v[..., :, None] * w[..., None, :] + w[..., :, None] * v[..., None, :])
    dot = np.sum(v * w, axis=-1)
    outer[..., np.arange(n), np.arange(n)] -= (dot / n)[..., None]
    return outer


def lambda_max(m):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError("expected a square matrix")
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > SYM_TOL * scale:
        raise SymmetryError("matrix is not symmetric within 1e-12")
    return float(lambda_max_batch(m))


def lambda_max_batch(m):
    """Largest eigenvalue of symmetric matrices of shape (..., n, n)."""
    m = np.asarray(m, dtype=float)
    n = m.shape[-1]
    m = 0.5 * (m + np.swapaxes(m, -1, -2))
    if n == 2:
        a, b, c = m[..., 0, 0], m[..., 0, 1], m[..., 1, 1]
        return 0.5 * (a + c) + np.hypot(0.5 * (a - c), b)
    if n == 3:
        return _lmax3(m)
    return _jacobi_max(m)


def _lmax3(m):
    # trigonometric solution of the characteristic cubic
    q = np.trace(m, axis1=-2, axis2=-1) / 3.0
    a = m - q[..., None, None] * np.eye(3)
    p1 = m[..., 0, 1] ** 2 + m[..., 0, 2] ** 2 + m[..., 1, 2] ** 2
    p2 = a[..., 0, 0] ** 2 + a[..., 1, 1] ** 2 + a[..., 2, 2] ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe = np.where(p > 0, p, 1.0)
    b = a / safe[..., None, None]
    r = np.clip(np.linalg.det(b) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    return np.where(p > 0, q + 2.0 * p * np.cos(phi), q)


def _jacobi_max(m):
    a = np.array(m, dtype=float, copy=True)
    batch = a.shape[:-2]
    a = a.reshape((-1,) + a.shape[-2:])
    n = a.shape[-1]
    for _ in range(JACOBI_SWEEPS):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2, axis=(-1, -2)))
        if np.all(off <= JACOBI_TOL * np.maximum(1.0, np.abs(a).max(axis=(-1, -2)))):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                app = a[:, p, p]
                aqq = a[:, q, q]
                rot = np.abs(apq) > 1e-300
                theta = np.where(rot, (aqq - app) / (2.0 * np.where(rot, apq, 1.0)), 0.0)
                t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(theta == 0, 1.0, t)
                t = np.where(rot, t, 0.0)
                c = 1.0 / np.sqrt(t ** 2 + 1.0)
                s = t * c
                ap = a[:, :, p].copy()
                aq = a[:, :, q].copy()
                a[:, :, p] = c[:, None] * ap - s[:, None] * aq
                a[:, :, q] = s[:, None] * ap + c[:, None] * aq
                rp = a[:, p, :].copy()
                rq = a[:, q, :].copy()
                a[:, p, :] = c[:, None] * rp - s[:, None] * rq
                a[:, q, :] = s[:, None] * rp + c[:, None] * rq
    return np.max(np.diagonal(a, axis1=-2, axis2=-1), axis=-1).reshape(batch)


def energy_density(p, u=None):
    """e(v,u) = (n/2) lambda_max(v (x) v - u).  Accepts an EulerPoint or (v, u)."""
    if u is None:
        v, um = p.v, p.u.matrix()
    else:
        v = as_velocity(p)
        um = u.matrix() if isinstance(u, TracelessSym) else np.asarray(u, dtype=float)
    return float(energy_density_batch(v, um))


def energy_density_batch(v, u):
    v = np.asarray(v, dtype=float)
    n = v.shape[-1]
    w = v[..., :, None] * v[..., None, :] - u
    return 0.5 * n * lambda_max_batch(w)


def lift(t):
    v = np.asarray(t.v, dtype=float)
    n = len(v)
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = t.u.matrix() + t.q * np.eye(n)
    out[:n, n] = v
    out[n, :n] = v
    return out


def unlift(U):
    """Inverse of lift: (v, u, q) with q = tr U / n."""
    U = np.asarray(U, dtype=float)
    n = U.shape[0] - 1
    q = np.trace(U) / n
    u = U[:n, :n] - q * np.eye(n)
    return ReynoldsTriple(U[:n, n].copy(), TracelessSym(n, pack_free(u)), float(q))


def euler_state_lift(a):
    """U_a = [[a o a, a], [a, 0]]."""
    a = as_velocity(a)
    return lift(ReynoldsTriple(a, traceless_product(a, a), 0.0))


def pressure_recovery(v, q):
    v = np.asarray(v, dtype=float)
    return q - np.sum(v * v, axis=-1) / v.shape[-1]
