"""Shared fixtures: each expensive synthesis runs once per session.

small_const   5x9 interior-row basis on c = 1 with interior-state oracles
desk_const    reduced-scale constant-speed data (19 x 61 sources)
fine_const    dense short-window basis on c = 1 (39 x 113 sources)
lens_desk     reduced-scale lens-model data
lens_aniso    lens internal-data table for metric recovery
"""

import numpy as np
import pytest

from bcwave import (aniso, basis, boundary_ops, control, forward, medium,
                    reconstruct)


class Setup:
    """Bag of per-fixture artifacts with attribute access."""

    def __init__(self, **kw):
        self.__dict__.update(kw)


@pytest.fixture(scope="session")
def small_const():
    """Constant speed, 45 sources with interior time rows; includes the
    interior-state oracle Gram and per-function final states."""
    field = medium.constant_speed(1.0, 2.75, 1.15, 0.025)
    tc = 0.3 + 0.1 * np.arange(5)
    xc = -0.4 + 0.1 * np.arange(9)
    spec = basis.build_basis(tc, xc, a=86.35, T=1.0, dt_q=0.01, dx_q=0.05,
                             gamma_margin=0.43)
    G = basis.gram(spec)
    grid = forward.make_sim_grid(field, -0.1, 2.0, dt_align=0.01)
    rec = forward.ReceiverSpec(-1.85, 1.85, 0.05, 0.01, 2.0)
    traces = forward.record_ndmap(field, spec, grid, rec)
    K = boundary_ops.assemble_K(traces, spec, G)
    states = forward.final_states_for_basis(field, spec, grid, 1.0)
    K_oracle = forward.interior_gram(field, states)
    bv = reconstruct.build_b_vectors(traces, spec, ["1", "x1", "x2"])
    return Setup(field=field, spec=spec, G=G, grid=grid, rec=rec,
                 traces=traces, K=K, states=states, K_oracle=K_oracle, bv=bv)


def _desk_basis(T=1.0):
    dts = dxs = 0.05
    a = 0.8635 / dts ** 2
    tc = dts * np.arange(1, 20)
    xc = dxs * (np.arange(61) - 30)
    return basis.build_basis(tc, xc, a=a, T=T, dt_q=0.005, dx_q=0.025,
                             gamma_margin=4 / np.sqrt(a))


@pytest.fixture(scope="session")
def desk_const():
    """Reduced-scale constant-speed pipeline inputs (traces synthesized by
    lateral shifting), with the connecting matrix and pairing vectors."""
    spec = _desk_basis()
    G = basis.gram(spec)
    field = medium.constant_speed(1.0, 4.45, 1.3, 0.0125)
    grid = forward.make_sim_grid(field, -0.1, 2.0, dt_align=0.005)
    rec = forward.ReceiverSpec(-2.9, 2.9, 0.025, 0.005, 2.0)
    traces = forward.record_ndmap(field, spec, grid, rec)
    K = boundary_ops.assemble_K(traces, spec, G)
    bv = reconstruct.build_b_vectors(traces, spec, ["1", "x1", "x2"])
    strip = medium.constant_speed(1.0, 2.2, 0.9, 0.0125)
    tables = {}

    def bdist_fn(y):
        key = round(float(y), 12)
        if key not in tables:
            tables[key] = control.boundary_distances_from_field(strip, key,
                                                                dx=0.00625)
        return tables[key]

    return Setup(field=field, spec=spec, G=G, grid=grid, rec=rec,
                 traces=traces, K=K, bv=bv, bdist_fn=bdist_fn)


@pytest.fixture(scope="session")
def fine_const():
    """Dense basis on a short window (T = 0.5) over c = 1; resolves caps down
    to h = 2 * dts = 0.025."""
    T = 0.5
    dts = dxs = 0.0125
    a = 0.8635 / dts ** 2
    tc = dts * np.arange(1, 40)
    xc = dxs * (np.arange(113) - 56)
    spec = basis.build_basis(tc, xc, a=a, T=T, dt_q=0.00125, dx_q=0.00625,
                             gamma_margin=0.05)
    G = basis.gram(spec)
    field = medium.constant_speed(1.0, 2.1, 0.65, 0.003125)
    grid = forward.make_sim_grid(field, -0.1, 2 * T, dt_align=0.00125)
    rec = forward.ReceiverSpec(-1.35, 1.35, 0.00625, 0.00125, 2 * T)
    traces = forward.record_ndmap(field, spec, grid, rec)
    K = boundary_ops.assemble_K(traces, spec, G)
    bv = reconstruct.build_b_vectors(traces, spec, ["1", "x1", "x2"])

    def bdist_fn(y):
        xs = spec.x_lattice()
        return control.BoundaryDistances(y, xs, np.abs(xs - y), tol=1e-9)

    return Setup(spec=spec, G=G, K=K, bv=bv, bdist_fn=bdist_fn, T=T)


@pytest.fixture(scope="session")
def lens_desk():
    """Reduced-scale lens-model data: direct simulation of every source."""
    spec = _desk_basis()
    G = basis.gram(spec)
    field = medium.lens_speed(4.2, 1.3, 0.0125)
    grid = forward.make_sim_grid(field, -0.1, 2.0, dt_align=0.005)
    rec = forward.ReceiverSpec(-2.9, 2.9, 0.025, 0.005, 2.0)
    traces = forward.record_ndmap(field, spec, grid, rec)
    K = boundary_ops.assemble_K(traces, spec, G)
    bv = reconstruct.build_b_vectors(traces, spec, ["1", "x1", "x2"])
    del traces
    strip = medium.lens_speed(2.2, 0.8, 0.0125)
    tables = {}

    def bdist_fn(y):
        key = round(float(y), 12)
        if key not in tables:
            tables[key] = control.boundary_distances_from_field(strip, key,
                                                                dx=0.00625)
        return tables[key]

    return Setup(spec=spec, G=G, K=K, bv=bv, bdist_fn=bdist_fn)


@pytest.fixture(scope="session")
def lens_recon(lens_desk):
    """Completed lens reconstruction (transform plus spline speeds)."""
    st = lens_desk
    ys = 0.05 * (np.arange(31) - 15)
    ss = 0.05 * np.arange(1, 14)
    h = 0.1
    alpha = control.default_alpha(st.K) * 100
    samples = reconstruct.build_transform(st.K, st.spec, st.bv, ys, ss, h,
                                          st.bdist_fn, alpha=alpha)
    return reconstruct.speed_from_transform(samples)


@pytest.fixture(scope="session")
def lens_aniso():
    """Lens internal-data table (oracle mode) on a dense chart."""
    spec = _desk_basis()
    field = medium.lens_speed(3.0, 1.2, 0.0125)
    grid = forward.make_sim_grid(field, -0.1, 1.0, dt_align=0.005)
    ys = 0.025 * (np.arange(49) - 24)
    ss = 0.025 * np.arange(2, 31)
    table = aniso.sample_Lg_oracle(field, spec, grid, ys, ss)
    return Setup(spec=spec, field=field, grid=grid, table=table, ys=ys, ss=ss)
