"""Gaussian source basis: normalization, Gram structure, projections."""

import numpy as np
import pytest

from bcwave import basis
from bcwave.basis import trapezoid_weights
from bcwave.errors import ConfigurationError


def full_scale_slice():
    """Interior slice of the full-resolution basis (a = 1381.6, spacing 0.025)."""
    tc = 0.025 + 0.025 * np.arange(8)
    xc = -0.25 + 0.025 * np.arange(21)
    return basis.build_basis(tc + 0.3, xc, a=1381.6, T=1.0,
                             dt_q=0.0025, dx_q=0.0125)


def test_full_configuration_counts():
    tc = 0.025 + 0.025 * np.arange(39)
    xc = -3.0 + 0.025 * np.arange(241)
    spec = basis.build_basis(tc, xc, a=1381.6, T=1.0, dt_q=0.0025, dx_q=0.0125)
    assert spec.n_t == 39 and spec.n_x == 241
    assert spec.size == 9399


def test_unit_norms_under_quadrature():
    spec = full_scale_slice()
    ts, xs = spec.t_lattice(), spec.x_lattice()
    wt = trapezoid_weights(ts.size, spec.dt_q)
    wx = trapezoid_weights(xs.size, spec.dx_q)
    gt = spec.time_profiles(ts)
    gx = spec.space_profiles(xs)
    norms = np.sqrt(np.outer(wt @ gt ** 2, wx @ gx ** 2))
    assert np.abs(norms - 1.0).max() < 1e-12


def test_width_parameter_arithmetic():
    # e-folding half-width of exp(-a x^2) is 1/sqrt(a), comparable to the
    # 0.025 source spacing at a = 1381.6; quadrature mass matches the
    # unbounded Gaussian integral for interior functions
    a = 1381.6
    assert 1 / np.sqrt(a) == pytest.approx(0.0269, abs=1e-4)
    spec = full_scale_slice()
    xs = spec.x_lattice()
    wx = trapezoid_weights(xs.size, spec.dx_q)
    mass = wx @ np.exp(-a * (xs - spec.x_centers[10]) ** 2)
    assert mass == pytest.approx(np.sqrt(np.pi / a), rel=1e-10)


def test_gram_diagonal_and_neighbors():
    spec = full_scale_slice()
    G = basis.gram(spec)
    Gd = G.dense()
    assert np.abs(np.diag(Gd) - 1.0).max() < 1e-12
    # neighbors offset by one lattice step in a single coordinate
    closed = np.exp(-1381.6 * 0.025 ** 2 / 2)
    assert closed == pytest.approx(0.6494, abs=1e-4)
    assert G.gt[3, 4] == pytest.approx(closed, abs=1e-6)
    assert G.gx[5, 6] == pytest.approx(closed, abs=1e-6)


def test_gram_spd():
    spec = full_scale_slice()
    G = basis.gram(spec)
    w = np.linalg.eigvalsh(G.dense())
    assert w.min() > 0


def test_gram_quadrature_refinement():
    tc = 0.4 + 0.05 * np.arange(3)
    xc = 0.05 * (np.arange(5) - 2)
    a = 345.4
    g1 = basis.gram(basis.build_basis(tc, xc, a=a, T=1.0, dt_q=0.005,
                                      dx_q=0.025, gamma_margin=0.2)).dense()
    g2 = basis.gram(basis.build_basis(tc, xc, a=a, T=1.0, dt_q=0.0025,
                                      dx_q=0.0125, gamma_margin=0.2)).dense()
    assert np.abs(g1 - g2).max() < 1e-8


def test_projection_reproduces_basis_function():
    spec = full_scale_slice()
    G = basis.gram(spec)
    i, j = 4, 7

    def f(t, x):
        return spec.ct[i] * spec.cx[j] * np.exp(
            -spec.a * ((t - spec.t_centers[i]) ** 2 + (x - spec.x_centers[j]) ** 2))

    cv = basis.project(f, spec, G)
    e = np.zeros(spec.size)
    e[spec.flat_index(i, j)] = 1.0
    assert np.abs(cv.coeffs - e).max() < 1e-10


def test_projection_zero():
    spec = full_scale_slice()
    G = basis.gram(spec)
    cv = basis.project(lambda t, x: 0.0 * t, spec, G)
    assert np.abs(cv.inner).max() == 0.0
    assert np.abs(cv.coeffs).max() == 0.0


def test_reproduction_property():
    # any function in the span projects back to its own coefficients
    spec = full_scale_slice()
    G = basis.gram(spec)
    rng = np.random.default_rng(3)
    coeffs = rng.standard_normal(spec.size)
    ts, xs = spec.t_lattice(), spec.x_lattice()
    gt = spec.time_profiles(ts)
    gx = spec.space_profiles(xs)
    field = (gt @ coeffs.reshape(spec.n_t, spec.n_x) @ gx.T)
    cv = basis.project(field, spec, G)
    assert np.linalg.norm(cv.coeffs - coeffs) < 1e-10 * np.linalg.norm(coeffs)


def test_b_moment_interior_approximation():
    # <b, phi_k> ~ (T - t_k) * mass for interior rows (Gaussian symmetry)
    spec = full_scale_slice()
    bm = basis.b_moment_vector(spec).reshape(spec.n_t, spec.n_x)
    ts, xs = spec.t_lattice(), spec.x_lattice()
    wt = trapezoid_weights(ts.size, spec.dt_q)
    wx = trapezoid_weights(xs.size, spec.dx_q)
    mass_t = wt @ spec.time_profiles(ts)
    mass_x = wx @ spec.space_profiles(xs)
    approx = np.outer((spec.T - spec.t_centers) * mass_t, mass_x)
    inner = np.s_[2:-2, 2:-2]
    rel = np.abs(bm[inner] - approx[inner]) / np.abs(bm[inner])
    assert rel.max() < 1e-6


def test_ricker_decomposition_errors():
    tc = 0.025 + 0.025 * np.arange(39)
    spec = basis.build_basis(tc, np.array([0.0]), a=1381.6, T=1.0,
                             dt_q=0.0025, dx_q=0.0125, gamma_margin=0.1)
    errs = basis.ricker_decomposition_errors(spec, start=-0.1)
    assert errs[3] < 1e-4           # i = 4
    assert errs[19] < 1e-6          # i = 20, window center
    assert errs.max() < 1e-4
    # from t = 0 the dropped terms at i = 4 are much larger, which is why
    # the integration starts at the buffer time
    errs0 = basis.ricker_decomposition_errors(spec, start=0.0)
    assert errs0[3] > 1e-4


def test_decomposition_reporter_sanity():
    # replacing the profile by a constant makes the double integral vanish;
    # the reported relative error is then exactly one
    spec = basis.build_basis([0.5], [0.0], a=345.4, T=1.0, dt_q=0.005,
                             dx_q=0.025, gamma_margin=0.2)
    ts = spec.t_lattice()
    wt = trapezoid_weights(ts.size, spec.dt_q)
    const = np.ones_like(ts)
    # I^2 of (d2/dt2 const) = 0, so the residual is the profile itself
    err = np.sqrt(wt @ const ** 2) / np.sqrt(wt @ const ** 2)
    assert err == 1.0


def test_degenerate_configuration_rejected():
    with pytest.raises(ConfigurationError):
        basis.build_basis([], [0.0], a=10.0, T=1.0, dt_q=0.01, dx_q=0.01)
    with pytest.raises(ConfigurationError):
        basis.build_basis([1.5], [0.0], a=10.0, T=1.0, dt_q=0.01, dx_q=0.01)
    with pytest.raises(ConfigurationError):
        basis.build_basis([0.5], [0.0], a=-1.0, T=1.0, dt_q=0.01, dx_q=0.01)


def test_index_mapping_bijection():
    spec = full_scale_slice()
    for m in (0, 5, spec.size - 1):
        i, j = spec.unflatten(m)
        assert spec.flat_index(int(i), int(j)) == m
