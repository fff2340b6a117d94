import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from eulerlab.states import (
    DimensionError, EulerPoint, ReynoldsTriple, SymmetryError, TracelessSym, energy_density,
    energy_density_batch, euler_state_lift, lambda_max, lambda_max_batch, lift, pack_free,
    pressure_recovery, traceless_product, traceless_product_batch, unlift, unpack_free,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def vec(n):
    return arrays(float, n, elements=finite)


def sym_traceless(n):
    return arrays(float, (n, n), elements=finite).map(lambda m: (m + m.T) / 2 - np.trace(m) / n * np.eye(n))


def test_zero_state_has_zero_energy():
    assert energy_density(np.zeros(2), np.zeros((2, 2))) == 0.0


def test_euler_state_energy_is_kinetic():
    # e(a, a o a) = |a|^2 / 2 exactly: v (x) v - u = |a|^2/n I
    a = np.array([0.6, -0.8])
    assert energy_density(a, traceless_product(a, a)) == pytest.approx(0.5, abs=1e-15)


def test_known_value_n2():
    # v = (1, 0), u = diag(1/2, -1/2) - diag(1/4,-1/4): v v^T - u = diag(3/4, 1/4); e = 2/2 * 3/4
    v = np.array([1.0, 0.0])
    u = np.diag([0.25, -0.25])
    assert energy_density(v, u) == pytest.approx(0.75, abs=1e-15)


def test_lambda_max_matches_lapack_n2_n3_n5():
    rng = np.random.default_rng(3)
    for n in (2, 3, 5):
        m = rng.normal(size=(200, n, n))
        m = m + np.swapaxes(m, 1, 2)
        ref = np.linalg.eigvalsh(m)[:, -1]
        assert np.max(np.abs(lambda_max_batch(m) - ref)) < 1e-12 * max(1.0, np.abs(ref).max())


def test_lambda_max_repeated_eigenvalues_n3():
    assert lambda_max(2.0 * np.eye(3)) == pytest.approx(2.0, abs=1e-14)
    assert lambda_max(np.diag([1.0, 1.0, -2.0])) == pytest.approx(1.0, abs=1e-14)


def test_lambda_max_rejects_asymmetric():
    with pytest.raises(SymmetryError):
        lambda_max(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_traceless_sym_validation():
    with pytest.raises(ValueError):
        TracelessSym.from_matrix(np.eye(2))
    with pytest.raises(SymmetryError):
        TracelessSym.from_matrix(np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(DimensionError):
        TracelessSym(3, np.zeros(3))


def test_velocity_dimension_checked():
    with pytest.raises(DimensionError):
        EulerPoint.make([1.0], np.zeros((1, 1)))


@given(sym_traceless(3))
def test_pack_roundtrip(m):
    assert np.allclose(unpack_free(pack_free(m), 3), m, atol=1e-12)


@given(vec(3), sym_traceless(3), st.floats(-5, 5))
def test_lift_roundtrip(v, u, q):
    U = lift(ReynoldsTriple(v, TracelessSym(3, pack_free(u)), q))
    back = unlift(U)
    assert np.allclose(back.v, v)
    assert np.allclose(back.u.matrix(), u, atol=1e-9)
    assert back.q == pytest.approx(q, abs=1e-9)
    assert U[3, 3] == 0.0
    assert np.allclose(U, U.T)


def test_euler_state_lift_is_traceless_with_zero_corner():
    U = euler_state_lift([0.3, 0.4, -1.2])
    assert abs(np.trace(U)) < 1e-15
    assert U[3, 3] == 0.0


def test_pressure_recovery():
    assert pressure_recovery(np.array([1.0, 1.0]), 3.0) == pytest.approx(2.0)


@settings(max_examples=200)
@given(st.integers(2, 4).flatmap(lambda n: st.tuples(vec(n), sym_traceless(n))))
def test_energy_dominates_kinetic_and_bounds_u(pair):
    v, u = pair
    n = len(v)
    e = energy_density_batch(v, u)
    scale = 1.0 + np.abs(v).max() ** 2 + np.abs(u).max()
    assert 0.5 * v @ v <= e + 1e-12 * scale
    assert np.abs(u).max() <= 2 * (n - 1) / n * e + 1e-12 * scale


@given(vec(2), sym_traceless(2), st.floats(0.1, 5))
def test_energy_is_positively_two_homogeneous(v, u, s):
    e1 = energy_density_batch(s * v, s * s * u)
    e0 = energy_density_batch(v, u)
    assert e1 == pytest.approx(s * s * e0, rel=1e-9, abs=1e-9)


@given(vec(2), sym_traceless(2), vec(2), sym_traceless(2), st.floats(0, 1))
def test_energy_is_convex(v1, u1, v2, u2, t):
    mid = energy_density_batch(t * v1 + (1 - t) * v2, t * u1 + (1 - t) * u2)
    ends = t * energy_density_batch(v1, u1) + (1 - t) * energy_density_batch(v2, u2)
    assert mid <= ends + 1e-9 * (1 + abs(ends))


def test_traceless_product_batch_matches_scalar():
    rng = np.random.default_rng(0)
    v, w = rng.normal(size=(2, 3))
    assert np.allclose(traceless_product(v, w).matrix(), traceless_product_batch(v, w))


def test_traceless_product_examples():
    assert np.allclose(traceless_product([1.0, 0.0], [1.0, 0.0]).matrix(), [[0.5, 0], [0, -0.5]])
    assert np.allclose(traceless_product([1.0, 0.0], [0.0, 1.0]).matrix(), [[0, 0.5], [0.5, 0]])
    rng = np.random.default_rng(5)
    for _ in range(50):
        v, w = rng.normal(size=(2, 3))
        ref = 0.5 * (np.outer(v, w) + np.outer(w, v)) - (v @ w) / 3 * np.eye(3)
        assert np.abs(traceless_product(v, w).matrix() - ref).max() < 1e-14


def test_lambda_max_examples_and_charpoly_oracle():
    assert lambda_max(np.diag([1.0, -1.0])) == 1.0
    assert lambda_max(np.array([[0.0, 1.0], [1.0, 0.0]])) == pytest.approx(1.0, abs=1e-15)
    rng = np.random.default_rng(9)
    for _ in range(200):
        m = rng.normal(size=(3, 3))
        m = m + m.T
        # companion-matrix roots of the characteristic polynomial
        roots = np.roots(np.poly(m)).real
        assert lambda_max(m) == pytest.approx(roots.max(), abs=1e-11 * max(1, abs(roots).max()))


def test_energy_density_examples():
    assert energy_density(np.zeros(2), np.diag([1.0, -1.0])) == pytest.approx(1.0, abs=1e-15)


def test_lift_example():
    v = np.array([1.0, 0.0])
    U = lift(ReynoldsTriple(v, traceless_product(v, v), 0.0))
    assert np.allclose(U, [[0.5, 0, 1], [0, -0.5, 0], [1, 0, 0]], atol=0)
    assert not lift(ReynoldsTriple(np.zeros(2), TracelessSym(2, np.zeros(2)), 0.0)).any()


def test_lift_trace_is_n_q():
    rng = np.random.default_rng(2)
    v = rng.normal(size=3)
    U = lift(ReynoldsTriple(v, traceless_product(v, rng.normal(size=3)), 0.7))
    assert np.trace(U) == pytest.approx(2.1, abs=1e-15)


def test_pressure_recovery_examples():
    assert pressure_recovery(np.zeros(2), 0.0) == 0.0
    assert pressure_recovery(np.array([1.0, 1.0]), 0.0) == pytest.approx(-1.0)
    rng = np.random.default_rng(4)
    v, q = rng.normal(size=3), rng.normal()
    assert abs(pressure_recovery(v, q) - (q - v @ v / 3)) < 1e-15


@settings(max_examples=200)
@given(st.integers(2, 3).flatmap(lambda n: st.tuples(vec(n), sym_traceless(n))))
def test_kinetic_equality_iff_euler_state(pair):
    v, u = pair
    e = energy_density_batch(v, u)
    on_state = np.abs(u - traceless_product_batch(v, v)).max() <= 1e-10
    if on_state:
        assert abs(e - 0.5 * v @ v) <= 1e-10 * (1 + v @ v)
    e_state = energy_density_batch(v, traceless_product_batch(v, v))
    assert abs(e_state - 0.5 * v @ v) <= 1e-10 * (1 + v @ v)
