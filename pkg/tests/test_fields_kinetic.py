import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eulerlab.diagnostics import generalized_integral
from eulerlab.fields import AtomLayer, EnergyTarget, Subsolution, lift_batch, tensor_gl, unlift_batch
from eulerlab.grid import BoxUnion
from eulerlab.kinetic import asymptotic_gain, brute_kinetic, layered_kinetic
from eulerlab.waves import atom_field

OMEGA = BoxUnion.box([-0.5, -0.5], [0.5, 0.5])


def toy_layer(N=3, seed=1, amp=0.3):
    rng = np.random.default_rng(seed)
    th = rng.uniform(0, 2 * np.pi, (4, 2))
    a = np.c_[np.cos(th[:, 0]), np.sin(th[:, 0])]
    b = np.c_[np.cos(th[:, 1]), np.sin(th[:, 1])]
    zeta = np.array([[0, 0], [1, 0], [0, -1], [1, 1]])
    return AtomLayer(0.2, N, zeta, np.array([2, 2, 1, 2]), a, b, np.full(4, amp), OMEGA)


def test_tensor_gl_integrates_polynomials():
    x, w = tensor_gl([0, -1], [2, 1], [3, 2], order=4)
    assert w.sum() == pytest.approx(4.0)
    assert np.sum(w * x[:, 0] ** 5 * x[:, 1] ** 2) == pytest.approx(64 / 6 * 2 / 3)


def test_energy_target_profile_integral():
    tgt = EnergyTarget.from_profile(lambda t: 1.0 + t)
    assert tgt.integral(OMEGA, 0.5)[0] == pytest.approx(1.5)
    plain = EnergyTarget(lambda x, t: 1.0 + x[:, 0] ** 2)
    val, err = plain.integral(OMEGA, 0.0)
    assert val == pytest.approx(1 + 1 / 12) and err < 1e-12


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_lift_unlift_roundtrip(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(5, 3))
    m = rng.normal(size=(5, 3, 3))
    u = 0.5 * (m + np.swapaxes(m, 1, 2))
    u -= np.trace(u, axis1=1, axis2=2)[:, None, None] / 3 * np.eye(3)
    q = rng.normal(size=5)
    v2, u2, q2 = unlift_batch(lift_batch(v, u, q))
    assert np.allclose(v2, v) and np.allclose(u2, u) and np.allclose(q2, q)


def test_layer_matches_single_atoms():
    L = toy_layer()
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.5, 0.5, (400, 2))
    t = rng.uniform(0.1, 0.6, 400)
    U = L.lifted(x, t)
    ref = sum(atom_field(L.atom(k), np.c_[x, t]) for k in range(len(L)))
    assert np.abs(U - ref).max() < 1e-13 * np.abs(ref).max()


def test_layer_directions():
    L = toy_layer()
    assert np.allclose(L.vbar, 0.3 * (L.a - L.b))
    tr = np.trace(L.ubar, axis1=1, axis2=2)
    assert np.allclose(tr, 0.0)


def test_subsolution_sums_layers():
    L = toy_layer()
    s = Subsolution(OMEGA, (0.0, 1.0), EnergyTarget.constant(1.0), (L,))
    s2 = s.add_layer(L.with_amplitude(np.full(4, 0.1)))
    x = np.array([[0.05, 0.02], [0.2, -0.1]])
    t = np.array([0.45, 0.3])
    assert np.allclose(s2.lifted(x, t), s.lifted(x, t) * (0.4 / 0.3))
    assert s2.atom_count() == 8 and s2.finest_h() == 0.2
    assert np.all(Subsolution.zero(OMEGA).energy(x, t) == 0)


@pytest.mark.parametrize("t", [0.25, 0.3, 0.45])
def test_layered_kinetic_matches_aligned_quadrature(t):
    # reference: pointwise |v|^2 on Gauss nodes aligned with every cutoff breakpoint
    L = toy_layer()
    s = Subsolution(OMEGA, (0.0, 1.0), EnergyTarget.constant(1.0), (L,))
    fast, ferr = layered_kinetic(s.layers, OMEGA, t)
    _, slow, serr = generalized_integral(s, OMEGA, t)
    assert abs(fast - slow) <= 1e-9 * max(1.0, abs(slow)) + ferr


def test_two_layer_cross_terms():
    L1 = toy_layer(N=3)
    L2 = toy_layer(N=5, seed=7, amp=0.2)
    s = Subsolution(OMEGA, (0.0, 1.0), EnergyTarget.constant(1.0), (L1, L2))
    fast, ferr = layered_kinetic(s.layers, OMEGA, 0.45)
    _, slow, _ = generalized_integral(s, OMEGA, 0.45)
    assert abs(fast - slow) <= 1e-9 * abs(slow) + ferr


def test_brute_kinetic_error_bar_covers_exact_value():
    s = Subsolution(OMEGA, (0.0, 1.0), EnergyTarget.constant(1.0), (toy_layer(),))
    fast, _ = layered_kinetic(s.layers, OMEGA, 0.45)
    slow, serr = brute_kinetic(s, OMEGA, 0.45, min_panels=4)
    assert abs(fast - slow) <= serr


def test_asymptotic_gain_is_high_frequency_limit():
    # the kinetic energy of a layer approaches its asymptotic gain as N grows
    t = 0.45
    gaps = []
    for N in (8, 32, 128):
        L = toy_layer(N=N)
        gaps.append(abs(layered_kinetic([L], OMEGA, t)[0] - asymptotic_gain(L, OMEGA, t)))
    assert gaps[2] < gaps[1] < gaps[0]


@pytest.mark.parametrize("N", [4, 32, 256])
def test_remainder_bound_covers_non_principal_part(N):
    from eulerlab.perturb import cell_samples
    L = toy_layer(N=N)
    y, own = cell_samples(L, np.random.default_rng(N), 4000)
    diff = np.linalg.norm(L.lifted(y[:, :2], y[:, 2]) - L.principal(y[:, :2], y[:, 2]), axis=(1, 2))
    bound = L.remainder_bound()
    assert np.all(diff <= bound[own])
    # the bound is not vacuous: sampled sup within a factor 10
    assert diff.max() >= 0.1 * bound.max()
    assert np.allclose(L.remainder_bound(4 * N), L.with_frequency(4 * N).remainder_bound(), rtol=1e-12)
