"""Masks, Tikhonov control solves, and wave-cap sources."""

import numpy as np
import pytest

from bcwave import basis, boundary_ops, control, forward, medium
from bcwave.errors import ConfigurationError


def euclid_bdist(xs, y):
    return control.BoundaryDistances(y, np.asarray(xs, float),
                                     np.abs(np.asarray(xs) - y), tol=1e-9)


def section_basis():
    tc = 0.025 + 0.025 * np.arange(39)
    xc = -3.0 + 0.025 * np.arange(241)
    return basis.build_basis(tc, xc, a=1381.6, T=1.0, dt_q=0.0025, dx_q=0.0125)


def test_tau_for_cap_formula():
    xs = np.linspace(-1, 1, 201)
    t1, t2 = control.tau_for_cap(0.0, 0.2, 0.3, euclid_bdist(xs, 0.0), T=1.0)
    np.testing.assert_allclose(t1.values, 0.2)
    np.testing.assert_allclose(t2.values, np.maximum(0.5 - np.abs(xs), 0.2))
    # the pointwise-maximum branch: far points stay at s
    assert t2(0.9) == pytest.approx(0.2)
    # h = 0 collapses tau2 onto tau1 except at the center point
    _, t2z = control.tau_for_cap(0.0, 0.2, 0.0, euclid_bdist(xs, 0.0), T=1.0)
    np.testing.assert_allclose(t2z.values, 0.2)


def test_tau_for_cap_window_guard():
    xs = np.linspace(-1, 1, 21)
    with pytest.raises(ConfigurationError):
        control.tau_for_cap(0.0, 0.8, 0.3, euclid_bdist(xs, 0.0), T=1.0)


def test_mask_all_and_none():
    spec = section_basis()
    xs = spec.x_lattice()
    assert control.mask_for_tau(control.tau_constant(xs, 1.0), spec).all()
    assert not control.mask_for_tau(control.tau_constant(xs, 0.0), spec).any()


def test_mask_count_at_half_window():
    # tau = 0.5 with T = 1 keeps the 20 time rows with centers >= 0.5
    spec = section_basis()
    xs = spec.x_lattice()
    mask = control.mask_for_tau(control.tau_constant(xs, 0.5), spec)
    rows = mask.reshape(spec.n_t, spec.n_x).any(axis=1)
    assert rows.sum() == 20
    assert mask.sum() == 20 * spec.n_x


def test_mask_nesting():
    spec = section_basis()
    xs = spec.x_lattice()
    bd = euclid_bdist(xs, 0.3)
    t1, t2 = control.tau_for_cap(0.3, 0.3, 0.2, bd, T=1.0)
    m1 = control.mask_for_tau(t1, spec)
    m2 = control.mask_for_tau(t2, spec)
    assert np.all(m2[m1])      # tau1 <= tau2 pointwise => mask1 within mask2


def test_solve_identity_scalar_algebra():
    n = 8
    K = boundary_ops.ConnectingMatrix(matrix=np.eye(n))
    b = np.zeros(n)
    b[0] = 1.0
    f = control.solve_control(K, b, np.ones(n, dtype=bool), alpha=1.0)
    expected = np.zeros(n)
    expected[0] = 0.5
    np.testing.assert_allclose(f, expected, atol=1e-14)
    with pytest.raises(ConfigurationError):
        control.solve_control(K, b, np.ones(n, dtype=bool), alpha=0.0)
    with pytest.raises(ConfigurationError):
        control.solve_control(K, b, np.zeros(n, dtype=bool), alpha=1.0)


def test_tikhonov_norm_monotone_in_alpha(small_const):
    st = small_const
    bvec = basis.b_moment_vector(st.spec)
    mask = np.ones(st.spec.size, dtype=bool)
    norms = [np.linalg.norm(control.solve_control(st.K, bvec, mask, a))
             for a in (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)]
    assert np.all(np.diff(norms) < 0)


def test_cap_source_support_and_h0(desk_const):
    st = desk_const
    bvec = basis.b_moment_vector(st.spec)
    bd = st.bdist_fn(0.0)
    cs = control.cap_source(st.K, st.spec, control.CapSpec(0.0, 0.3, 0.1), bd,
                            bvec)
    # psi vanishes identically outside the outer mask
    assert np.abs(cs.psi[~cs.mask2]).max() == 0.0
    assert cs.volume > 0
    # h = 0: identical masks and right-hand sides, so psi = 0
    cs0 = control.cap_source(st.K, st.spec, control.CapSpec(0.0, 0.3, 0.0), bd,
                             bvec)
    assert np.abs(cs0.psi).max() == 0.0


def test_volume_positive_across_grid(desk_const):
    st = desk_const
    bvec = basis.b_moment_vector(st.spec)
    alpha = control.default_alpha(st.K) * 100
    for y in (-0.6, 0.0, 0.6):
        bd = st.bdist_fn(y)
        for s in (0.1, 0.3, 0.5):
            cs = control.cap_source(st.K, st.spec,
                                    control.CapSpec(y, s, 0.1, alpha), bd, bvec)
            assert cs.volume > 0


def test_cap_volume_alpha_robustness(desk_const):
    # the volume scalar at the working regularization moves less than ten
    # percent when alpha is halved
    st = desk_const
    bvec = basis.b_moment_vector(st.spec)
    bd = st.bdist_fn(0.0)
    al = control.default_alpha(st.K) * 100
    v1 = control.cap_source(st.K, st.spec, control.CapSpec(0.0, 0.3, 0.1, al),
                            bd, bvec).volume
    v2 = control.cap_source(st.K, st.spec,
                            control.CapSpec(0.0, 0.3, 0.1, al / 2), bd, bvec).volume
    assert abs(v2 - v1) / v1 < 0.1


def test_circular_segment_area_formula():
    # closed form for the Euclidean cap area cross-checked by quadrature of
    # the cap indicator
    s, h = 0.3, 0.05
    r = s + h
    area = r * r * np.arccos(s / r) - s * np.sqrt(r * r - s * s)
    assert area == pytest.approx(0.01220, abs=2e-5)
    # cell-centered indicator quadrature (offset avoids boundary ties)
    dx = 5e-4
    xs = np.arange(-0.6 + dx / 2, 0.6, dx)
    zs = np.arange(-0.6 + dx / 2, 0.0, dx)
    X, Z = np.meshgrid(xs, zs, indexing="ij")
    ind = (np.hypot(X, Z) <= r) & (-Z >= s)
    assert ind.sum() * dx * dx == pytest.approx(area, rel=1e-2)


def test_eigh_sweep_matches_direct(desk_const):
    st = desk_const
    bvec = basis.b_moment_vector(st.spec)
    bd = st.bdist_fn(0.0)
    al = control.default_alpha(st.K) * 100
    cs_direct = control.cap_source(st.K, st.spec,
                                   control.CapSpec(0.0, 0.3, 0.1, al), bd, bvec)
    cs_sweep = control.cap_source(st.K, st.spec, control.CapSpec(0.0, 0.3, 0.1),
                                  bd, bvec, alphas=[10 * al, al])
    assert np.abs(cs_direct.psi - cs_sweep.psi).max() < 1e-8
    assert cs_sweep.diagnostics["volume_sweep"].shape == (2,)


def test_cap_wavefield_approaches_indicator(desk_const):
    # forward-oracle version of the regularized control limit: the final
    # state of the cap source approaches the cap indicator as alpha drops,
    # with the indicator built from eikonal fields
    st = desk_const
    bvec = basis.b_moment_vector(st.spec)
    bd = st.bdist_fn(0.0)
    y, s, h = 0.0, 0.3, 0.1
    field = st.field
    dG = medium.eikonal_distance(field, ("surface", (-st.spec.gamma_half,
                                                     st.spec.gamma_half)),
                                 method="sweeping")
    dy = medium.eikonal_distance(field, ("point", (y, 0.0)), method="sweeping")
    indicator = ((dG.values >= s) & (dy.values <= s + h)).astype(float)
    w = forward.interior_weights(field) / field.values ** 2
    al0 = control.default_alpha(st.K)
    errs = []
    # decreasing alpha from the over-damped regime down to the
    # discretization floor (around 1e3 x default at this resolution)
    for al in (al0 * 1e5, al0 * 1e4, al0 * 1e3):
        cs = control.cap_source(st.K, st.spec, control.CapSpec(y, s, h, al),
                                bd, bvec)
        idx = np.nonzero(cs.psi)[0]
        states = forward.final_states_for_basis(field, st.spec, st.grid, 1.0,
                                                indices=idx)
        u = np.einsum("n,nxz->xz", cs.psi[idx], states)
        errs.append(np.sqrt(np.sum(w * (u - indicator) ** 2)))
    assert np.all(np.diff(errs) < 0)


def test_default_alpha_scale(small_const):
    K = small_const.K
    assert control.default_alpha(K) == pytest.approx(
        1e-4 * np.trace(K.matrix) / K.size)
