import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from eulerlab.grid import cutoff_eval
from eulerlab.waves import (
    DegenerateGenerators, WaveAtom, WaveGenerators, atom_eval, atom_field, atom_residual, eta,
    eta_batch, euler_lift_matrix, multi_indices, sin_sq_average, symbol_eval, symbol_tensor,
)


def unit_pair(n):
    return st.tuples(arrays(float, n, elements=st.floats(-1, 1)), arrays(float, n, elements=st.floats(-1, 1)))


def normalise(a, b, r=1.0):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    assume(na > 1e-3 and nb > 1e-3)
    a, b = r * a / na, r * b / nb
    assume(min(np.linalg.norm(a - b), np.linalg.norm(a + b)) > 1e-2)
    return a, b


@settings(max_examples=100)
@given(st.sampled_from([2, 3]).flatmap(unit_pair), arrays(float, 4, elements=st.floats(-2, 2)))
def test_symbol_constraints(pair, xi):
    a, b = normalise(*pair)
    xi = xi[: len(a) + 1]
    A = symbol_eval(a, b, xi)
    scale = 1 + np.abs(xi).max() ** 3
    assert np.allclose(A, A.T)
    assert np.abs(A @ xi).max() < 1e-12 * scale
    assert abs(np.trace(A)) < 1e-12 * scale
    assert abs(A[-1, -1]) < 1e-12 * scale


@settings(max_examples=100)
@given(st.sampled_from([2, 3]).flatmap(unit_pair), st.floats(0.2, 3))
def test_symbol_at_eta_is_state_difference(pair, r):
    a, b = normalise(*pair, r)
    A = symbol_eval(a, b, eta(a, b))
    D = euler_lift_matrix(a) - euler_lift_matrix(b)
    assert np.abs(A - D).max() < 1e-10 * max(1.0, r * r)


def test_symbol_tensor_contracts_to_symbol():
    a, b = np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.6, 0.8])
    xi = np.array([0.3, -1.1, 0.7, 0.25])
    C = symbol_tensor(a, b)
    assert np.allclose(np.einsum("pqijk,i,j,k->pq", C, xi, xi, xi), symbol_eval(a, b, xi))


def test_eta_batch_and_degeneracy():
    a = np.array([[1.0, 0.0], [0.6, 0.8]])
    b = np.array([[0.0, 1.0], [-0.8, 0.6]])
    assert np.allclose(eta_batch(a, b), [eta(a[0], b[0]), eta(a[1], b[1])])
    with pytest.raises(DegenerateGenerators):
        eta([1.0, 0.0], [-1.0, 0.0])
    with pytest.raises(DegenerateGenerators):
        WaveGenerators(np.array([1.0, 0.0]), np.array([0.0, 2.0]))
    with pytest.raises(DegenerateGenerators):
        WaveGenerators(np.array([1.0, 0.0]), np.array([1.0, 0.0]))


def test_multi_indices_count():
    # C(m + 3, 3) multi-indices of order <= 3
    assert len(multi_indices(3, 3)) == 20
    assert len(multi_indices(4, 3)) == 35


def _atom():
    return WaveAtom.make([1.0, 0.0], [0.0, 1.0], 0.3, 8, [0.0, 0.0, 0.0], 1.0)


def test_atom_is_pointwise_admissible():
    res = atom_residual(_atom(), 0.05)
    assert res.symmetry < 1e-14 and res.corner < 1e-14 and res.trace < 1e-13


def test_atom_divergence_is_second_order():
    w = _atom()
    steps = [4e-3, 2e-3, 1e-3, 5e-4]
    errs = [atom_residual(w, 0.1, step=s).divergence for s in steps]
    ratios = [errs[i] / errs[i + 1] for i in range(3)]
    assert all(3.0 <= q <= 5.0 for q in ratios), ratios


def test_atom_vanishes_outside_cell():
    w = _atom()
    y = np.array([[0.51, 0.0, 0.0], [0.0, -0.6, 0.1], [0.2, 0.2, 0.55]])
    assert np.abs(atom_field(w, y)).max() == 0.0


def test_atom_eval_triple():
    w = _atom()
    tr = atom_eval(w, [0.01, 0.02], 0.0)
    U = atom_field(w, np.array([[0.01, 0.02, 0.0]]))[0]
    assert np.allclose(tr.v, U[:2, 2]) and tr.q == 0.0


@pytest.mark.parametrize("N", [3, 64, 1024])
def test_atom_on_plateau_is_the_plane_wave(N):
    # phi == 1 on the plateau, so only the cubic term survives: amp (U_a - U_b) sin(N eta.y)
    w = WaveAtom.make([1.0, 0.0], [0.0, 1.0], 0.3, N, [0.0, 0.0, 0.0], 1.0)
    y = np.array([[0.05, -0.1, 0.02], [0.3, 0.3, -0.3]])
    U = atom_field(w, y)
    ref = w.direction()[None] * np.sin(w.N * (y @ w.eta))[:, None, None]
    assert np.abs(U - ref).max() < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 1), st.integers(1, 64))
def test_sin_sq_average_matches_closed_form(e0, e1, t, N):
    assume(abs(e0) + abs(e1) > 1e-2)
    et = np.array([e0, e1, 0.7])
    lo, hi = np.array([-0.3, 0.1]), np.array([0.4, 0.5])
    prod = np.exp(2j * N * et[-1] * t)
    for d in range(2):
        k = 2 * N * et[d]
        prod *= (hi[d] - lo[d]) if abs(k) < 1e-12 else (np.exp(1j * k * hi[d]) - np.exp(1j * k * lo[d])) / (1j * k)
    exact = 0.5 * np.prod(hi - lo) - 0.5 * prod.real
    # the default 4 nodes per wave is good to ~1e-6 |B|; denser rules converge to roundoff
    assert sin_sq_average((lo, hi), et, N, t) == pytest.approx(exact, abs=1e-6 * np.prod(hi - lo))
    assert sin_sq_average((lo, hi), et, N, t, ppw=16) == pytest.approx(exact, abs=1e-12)


def test_eta_and_symbol_examples():
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert np.allclose(eta(a, b), [-1, -1, 1])
    assert np.allclose(symbol_eval(a, b, eta(a, b)), [[1, 0, 1], [0, -1, -1], [1, -1, 0]], atol=1e-14)
    assert not symbol_eval(a, b, np.array([0.0, 0.0, 1.0])).any()


@settings(max_examples=50)
@given(st.sampled_from([2, 3]).flatmap(unit_pair), arrays(float, 4, elements=st.floats(-2, 2)), st.floats(-3, 3))
def test_symbol_is_cubic(pair, xi, s):
    a, b = normalise(*pair)
    xi = xi[: len(a) + 1]
    assert np.allclose(symbol_eval(a, b, s * xi), s ** 3 * symbol_eval(a, b, xi), atol=1e-10)


def test_atom_distance_to_principal_part_is_order_one_over_n():
    # sup over the cell of |atom - phi (U_a - U_b) sin(N eta.y)| on a 50^3 lattice.
    # The ramp is h/8 wide, so the N^-2 and N^-3 terms dominate below N ~ 64.
    ax = np.linspace(-0.5, 0.5, 50)
    y = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    Ns = np.array([64, 128, 256, 512])
    errs = []
    for N in Ns:
        w = WaveAtom.make([1.0, 0.0], [0.0, 1.0], 0.3, N, [0.0, 0.0, 0.0], 1.0)
        ref = (cutoff_eval(w.cutoff(), y) * np.sin(N * (y @ w.eta)))[:, None, None] * w.direction()[None]
        errs.append(np.abs(atom_field(w, y) - ref).max())
    errs = np.array(errs)
    ratios = errs[:-1] / errs[1:]
    assert np.all(np.abs(ratios - 2) <= 0.2), ratios
    C = errs * Ns
    assert C.max() / C.min() < 1.25


def test_atom_divergence_vanishes_on_plateau():
    # phi == 1 there, so the divergence of the pure plane wave is exact up to roundoff
    w = WaveAtom.make([0.6, 0.8], [1.0, 0.0], 0.2, 16, [0.0, 0.0, 0.0], 1.0)
    ax = np.linspace(-0.3, 0.3, 7)
    y = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    # analytic derivative of amp (U_a - U_b) sin(N eta.y): N cos(N eta.y) (U_a - U_b) eta
    U = atom_field(w, y)
    D = w.direction()
    div = (w.N * np.cos(w.N * (y @ w.eta)))[:, None] * (D @ w.eta)[None]
    assert np.abs(div).max() < 1e-12
    assert np.abs(U - D[None] * np.sin(w.N * (y @ w.eta))[:, None, None]).max() < 1e-12


def test_sin_sq_average_examples():
    et = np.array([-1.0, -1.0, 1.0])
    for t in (0.0, 0.3, 0.77):
        assert abs(sin_sq_average(([0, 0], [1, 1]), et, 256, t) - 0.5) <= 0.01
    big = ([0, 0], [2 * np.pi, 2 * np.pi])
    assert sin_sq_average(big, np.array([1.0, 0.0, 0.0]), 1, 0.0) == pytest.approx(2 * np.pi ** 2, abs=1e-12)


def test_sin_sq_deviation_shrinks_with_n():
    et = np.array([0.37, -0.81, 0.5])
    box = ([0.1, -0.2], [0.83, 0.61])
    devs = [abs(sin_sq_average(box, et, N, 0.4) - 0.5 * 0.73 * 0.81) for N in (16, 32, 64, 128, 256, 512)]
    # monotone up to 10% noise: no deviation exceeds 1.1 x any earlier one
    assert all(devs[k] <= 1.1 * min(devs[:k]) for k in range(1, len(devs)))
