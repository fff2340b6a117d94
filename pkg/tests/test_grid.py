import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eulerlab.grid import (
    BoxUnion, CutoffProfile, EmptyGrid, GridPrecondition, build_grid, cutoff_eval, deficit,
    omega_tau_sets, ramp, smooth_step, spatial_cells,
)


def test_box_union_basic_measures():
    L = BoxUnion.from_boxes([([0, 0], [1, 1]), ([1, 0], [2, 0.5])])
    assert L.measure() == pytest.approx(1.5)
    # 4 + 3 for the two boxes, minus the shared face of length 0.5 counted twice
    assert L.perimeter() == pytest.approx(6.0)
    assert L.contains([[0.5, 0.5], [1.5, 0.75]]).tolist() == [True, False]
    assert L.diameter() == pytest.approx(np.sqrt(5))


def test_shrink_drops_thin_boxes():
    L = BoxUnion.from_boxes([([0, 0], [1, 1]), ([2, 0], [2.1, 1])])
    s = L.shrink(0.1)
    assert len(s.boxes) == 1 and s.measure() == pytest.approx(0.64)


def test_smooth_step_symmetry_and_limits():
    u = np.linspace(-0.5, 1.5, 401)
    S = smooth_step(u)[0]
    assert np.allclose(S + smooth_step(1 - u)[0], 1.0)
    assert np.all(S[u <= 0] == 0) and np.all(S[u >= 1] == 1)
    assert np.all(np.diff(S) >= 0)


def test_ramp_plateau_support_and_derivatives():
    h = 0.2
    s = np.linspace(-0.12, 0.12, 2001)
    r = ramp(s, h)
    assert np.all(r[0][np.abs(s) <= 3 * h / 8] == 1.0)
    assert np.all(r[0][np.abs(s) >= h / 2] == 0.0)
    step = 1e-6
    for k in range(3):
        fd = (ramp(s + step, h)[k] - ramp(s - step, h)[k]) / (2 * step)
        scale = np.abs(r[k + 1]).max()
        assert np.abs(fd - r[k + 1]).max() < 1e-5 * scale


def test_cutoff_eval_orders_agree_with_fd():
    c = CutoffProfile(np.array([0.0, 0.1, 0.2]), 0.5)
    y = np.array([[0.2, -0.05, 0.41], [-0.21, 0.3, 0.1]])
    g = cutoff_eval(c, y, 1)
    H = cutoff_eval(c, y, 2)
    e = 1e-6
    for d in range(3):
        dy = np.zeros(3)
        dy[d] = e
        assert np.allclose((cutoff_eval(c, y + dy) - cutoff_eval(c, y - dy)) / (2 * e), g[:, d], atol=1e-6)
        assert np.allclose((cutoff_eval(c, y + dy, 1) - cutoff_eval(c, y - dy, 1)) / (2 * e), H[:, d], atol=1e-4)
    assert np.allclose(H, np.swapaxes(H, 1, 2))
    with pytest.raises(ValueError):
        cutoff_eval(c, y, 4)


def test_build_grid_preconditions():
    om = BoxUnion.box([0, 0], [1, 1])
    with pytest.raises(GridPrecondition):
        build_grid(om, 0.1, 1.0, 0.05)
    with pytest.raises(EmptyGrid):
        build_grid(BoxUnion.box([0, 0], [0.01, 0.01]), 0.5, 1.0, 0.1)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.02, 0.1), st.integers(0, 1000))
def test_cells_tile_without_overlap(h, seed):
    om = BoxUnion.box([0, 0], [1, 0.7])
    g = build_grid(om, 2.5 * h, 1.0, h)
    lo, hi = g.time_interval()
    assert np.all(lo >= g.window[0] - 1e-12) and np.all(hi <= g.window[1] + 1e-12)
    c = g.centers[:, :-1]
    assert np.all(om.contains(c - h / 2, closed=True) & om.contains(c + h / 2, closed=True))
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (500, 2)) * [1, 0.7]
    t = rng.uniform(*g.window, 500)
    phi = g.phi_h(x, t)
    assert np.all((phi >= 0) & (phi <= 1))
    k = g.locate(x, t)
    hit = k >= 0
    assert np.all(np.abs(x[hit] - c[k[hit]]) <= h / 2 + 1e-12)
    assert np.all(np.abs(t[hit] - g.centers[k[hit], -1]) <= h / 2 + 1e-12)


def test_exactly_one_parity_on_plateau_at_each_time():
    # at every time, either the even or the odd family of cells is in its time plateau
    om = BoxUnion.box([0, 0], [1, 1])
    g = build_grid(om, 0.3, 2.0, 0.1)
    for t in np.linspace(0.3, 1.7, 57):
        o1, o2 = omega_tau_sets(g, 1), omega_tau_sets(g, 2)
        assert bool(o1.contains_t(t)) != bool(o2.contains_t(t))


@pytest.mark.parametrize("n", [2, 3])
def test_omega_tau_measure_tends_to_fraction(n):
    om = BoxUnion.box([0.0] * n, [1.0] * n)
    target = 0.5 * 0.75 ** n * om.measure()
    errs = []
    for h in (0.1, 0.05, 0.025):
        g = build_grid(om, 2.5 * h, 1.0, h)
        for nu in (1, 2):
            err = abs(omega_tau_sets(g, nu).measure() - target)
            assert err <= 3 * h * om.perimeter()
        errs.append(err)
    assert errs[-1] < errs[0]


def test_spatial_cells_fit_inside_union():
    om = BoxUnion.from_boxes([([0, 0], [0.5, 0.5]), ([0.5, 0], [1.0, 0.25])])
    z = spatial_cells(om, 0.1)
    assert len(z) > 0
    assert np.all(om.overlap(z * 0.1 - 0.05, z * 0.1 + 0.05) >= 0.01 * (1 - 1e-9))


def test_deficit_values_and_integral():
    om = BoxUnion.box([0, 0], [1, 1])
    g = build_grid(om, 0.3, 1.0, 0.1)
    D = deficit(g, lambda x, t: np.ones_like(x), lambda x, t: np.full(len(x), 2.0))
    assert np.allclose(D.values, -1.0)
    for nu in (1, 2):
        # |E| = 1 on every located cell inside the window
        assert D.omega_integral(0.5, nu) == pytest.approx(omega_tau_sets(g, nu).measure())
    assert D.omega_integral(5.0, 1) == 0.0


def test_phi_is_one_on_omega_tau():
    om = BoxUnion.box([-1, -1], [1, 1])
    g = build_grid(om, 0.2, 1.0, 0.05)
    rng = np.random.default_rng(0)
    for nu in (1, 2):
        ot = omega_tau_sets(g, nu)
        z = ot.zeta[rng.integers(len(ot.zeta), size=5000)]
        x = z * g.h + rng.uniform(-0.375, 0.375, (5000, 2)) * g.h
        i = rng.integers(3, 17, 5000)
        t = (i + rng.uniform(0.25, 0.75, 5000)) * g.h
        t = np.where(nu == 2, t + 0.5 * g.h, t)
        assert np.all(ot.contains_x(x)) and np.all(ot.contains_t(t))
        assert np.all(g.phi_h(x, t) == 1.0)


def test_grid_example_and_parity_offset():
    om = BoxUnion.box([-1, -1], [1, 1])
    g = build_grid(om, 0.2, 1.0, 0.1 - 1e-9)
    lo, hi = g.time_interval()
    assert g.size > 0 and np.all(lo >= 0.1 - 1e-9) and np.all(hi <= 0.9 + 1e-9)
    g = build_grid(om, 0.3, 1.0, 0.1)
    lo, _ = g.time_interval()
    even = np.mod(lo[~g.odd] / g.h, 1.0)
    odd = np.mod(lo[g.odd] / g.h, 1.0)
    assert np.allclose(np.minimum(even, 1 - even), 0, atol=1e-9)
    assert np.allclose(odd, 0.5, atol=1e-9)
    with pytest.raises(GridPrecondition):
        build_grid(om, 0.2, 1.0, 0.1)


def test_cutoff_center_and_outside():
    c = CutoffProfile(np.array([0.2, -0.1, 0.5]), 0.4)
    assert cutoff_eval(c, c.center) == 1.0
    for k in (1, 2, 3):
        assert not cutoff_eval(c, c.center[None], k).any()
    out = c.center[None] + np.array([[0.21, 0, 0]])
    assert cutoff_eval(c, out)[0] == 0.0
    assert not cutoff_eval(c, out, 3).any()


def test_cutoff_gradient_fd_oracle():
    c = CutoffProfile(np.zeros(3), 1.0)
    rng = np.random.default_rng(3)
    y = rng.uniform(-0.5, 0.5, (100, 3))
    g = cutoff_eval(c, y, 1)
    step = 1e-5
    for d in range(3):
        e = np.zeros(3)
        e[d] = step
        fd = (cutoff_eval(c, y + e) - cutoff_eval(c, y - e)) / (2 * step)
        # relative to the gradient scale; pointwise ratios blow up where the gradient vanishes
        assert np.abs(fd - g[:, d]).max() <= 1e-6 * np.abs(g).max()


def test_c3_norm_scales_as_h_cubed():
    r = CutoffProfile(np.zeros(3), 0.1).c3_norm() / CutoffProfile(np.zeros(3), 0.2).c3_norm()
    assert abs(r / 8 - 1) <= 0.15


def test_deficit_zero_when_kinetic_matches_target():
    om = BoxUnion.box([0, 0], [1, 1])
    g = build_grid(om, 0.3, 1.0, 0.1)
    v = lambda x, t: np.c_[np.sin(x[:, 0] + t), np.cos(x[:, 1])]
    eb = lambda x, t: 0.5 * (np.sin(x[:, 0] + t) ** 2 + np.cos(x[:, 1]) ** 2)
    assert np.abs(deficit(g, v, eb).values).max() < 1e-15


def test_deficit_integral_converges_to_quadrature():
    om = BoxUnion.box([0, 0], [1, 1])
    v = lambda x, t: np.c_[np.sin(3 * x[:, 0] + t), x[:, 1]]
    eb = lambda x, t: np.full(len(x), 2.0)
    f = lambda x, t: np.abs(0.5 * np.sum(v(x, t) ** 2, axis=1) - 2.0)
    gaps = []
    for h in (0.1, 0.05, 0.025):
        g = build_grid(om, 2.5 * h, 1.0, h)
        D = deficit(g, v, eb)
        ot = omega_tau_sets(g, 1)
        t = (np.floor(0.5 / h) + 0.5) * h  # inside tau_1, inside the window
        # direct quadrature of |1/2|v|^2 - ebar| over the plateaus of Omega^h_1
        s = np.linspace(-0.375, 0.375, 9)[1:-1:2] * h
        gx = np.array([[a, b] for a in s for b in s])
        pts = (ot.zeta * h)[:, None, :] + gx[None]
        quad = float(np.mean(f(pts.reshape(-1, 2), t)) * ot.measure())
        gaps.append(abs(D.omega_integral(t, 1) - quad))
    assert gaps[2] < gaps[1] < gaps[0]
