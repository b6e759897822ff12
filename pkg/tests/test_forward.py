"""Acoustic solver: stability, accuracy, and trace synthesis."""

import numpy as np
import pytest

from bcwave import basis, forward, medium
from bcwave.errors import ConfigurationError


def small_setup(c=1.0, dx=0.025):
    field = medium.constant_speed(c, 1.8, 1.2, dx)
    spec = basis.build_basis([0.3], [0.0], a=345.4, T=1.0, dt_q=0.01,
                             dx_q=0.05, gamma_margin=0.2)
    grid = forward.make_sim_grid(field, -0.1, 2.0, dt_align=0.01)
    rec = forward.ReceiverSpec(-1.0, 1.0, 0.05, 0.01, 2.0)
    return field, spec, grid, rec


def test_cfl_violation_rejected():
    field = medium.constant_speed(1.0, 1.0, 1.0, 0.02)
    grid = forward.SimGrid(dx=0.02, dt=0.02, t_start=0.0, t_end=1.0, cfl=1.0)
    spec = basis.build_basis([0.3], [0.0], a=345.4, T=1.0, dt_q=0.02,
                             dx_q=0.02, gamma_margin=0.2)
    with pytest.raises(ConfigurationError):
        forward.simulate(field, forward.basis_source(spec, 0), grid)


def test_zero_source_zero_output():
    field, spec, grid, rec = small_setup()
    src = forward.SurfaceSource(time_fn=lambda t: 0.0,
                                space_fn=lambda xs: np.zeros_like(xs))
    res = forward.simulate(field, src, grid, receivers=rec, snapshot_times=(1.0,))
    assert np.abs(res["trace"]).max() == 0.0
    assert np.abs(res["snapshots"][0].values).max() == 0.0


def test_first_arrival_from_eikonal():
    field, spec, grid, rec = small_setup()
    res = forward.simulate(field, forward.basis_source(spec, 0), grid,
                           receivers=rec)
    tr = res["trace"]
    assert np.abs(tr).max() > 0
    # receiver at x = 0.8: travel time 0.8, source centered at t = 0.3 with
    # 1/sqrt(a) = 0.054 width; quiet until just before center + travel time
    ts = rec.ts
    col = np.argmin(np.abs(rec.xs - 0.8))
    t_arrival = 0.3 + 0.8
    quiet = tr[ts < t_arrival - 5 / np.sqrt(345.4), col]
    assert np.abs(quiet).max() < 1e-3 * np.abs(tr[:, col]).max()


def test_self_convergence_second_order():
    errs = []
    for dx in (0.04, 0.02, 0.01):
        field = medium.constant_speed(1.0, 1.6, 1.2, dx)
        spec = basis.build_basis([0.3], [0.0], a=345.4, T=1.0, dt_q=0.02,
                                 dx_q=0.08, gamma_margin=0.2)
        grid = forward.make_sim_grid(field, 0.0, 1.6, cfl_limit=0.5,
                                     dt_align=None)
        rec_rows = forward.simulate(field, forward.basis_source(spec, 0), grid,
                                    record_full_surface=True)
        errs.append((grid.dt, rec_rows["surface"], rec_rows["surface_xs"]))
    # compare on the shared coarse space-time lattice
    def subsample(entry, dt_t, xs_t):
        dt, rows, xs = entry
        st = int(round(dt_t / dt))
        sx = int(round((xs_t[1] - xs_t[0]) / (xs[1] - xs[0])))
        i0 = int(round((xs_t[0] - xs[0]) / (xs[1] - xs[0])))
        return rows[::st, i0::sx][:, :xs_t.size]
    dt_t, xs_t = errs[0][0], errs[0][2]
    a = subsample(errs[0], dt_t, xs_t)
    b = subsample(errs[1], dt_t, xs_t)
    c = subsample(errs[2], dt_t, xs_t)
    e1 = np.linalg.norm(a - b)
    e2 = np.linalg.norm(b - c)
    assert np.log2(e1 / e2) > 1.9


def test_energy_non_increasing():
    field, spec, grid, rec = small_setup()
    res = forward.simulate(field, forward.basis_source(spec, 0), grid,
                           track_energy=True)
    E = res["energy"]
    k0 = int(0.7 / grid.dt)    # source has died by t = 0.6
    tail = E[k0:]
    assert np.all(np.diff(tail) <= 1e-10 * abs(tail[0]))


def test_linearity_and_superposition():
    field, spec, grid, rec = small_setup()
    s1 = forward.basis_source(spec, 0)
    s2 = forward.SurfaceSource(
        time_fn=lambda t: np.exp(-300 * (t - 0.45) ** 2),
        space_fn=lambda xs: np.exp(-200 * (xs - 0.2) ** 2), cutoff=1.0)
    u1 = forward.final_state(field, s1, grid, 1.0).values
    u2 = forward.final_state(field, s2, grid, 1.0).values
    u_sum = forward.final_state(field, forward.SumSource(s1, s2), grid, 1.0).values
    assert np.abs(u_sum - (u1 + u2)).max() < 1e-12 * np.abs(u_sum).max()
    s_scaled = forward.SurfaceSource(time_fn=lambda t: 3.0 * s1.time_value(t),
                                     space_fn=s1.space_fn, cutoff=s1.cutoff)
    u_scaled = forward.final_state(field, s_scaled, grid, 1.0).values
    assert np.abs(u_scaled - 3 * u1).max() < 1e-12 * np.abs(u1).max()


def test_time_translation_invariance():
    field, spec, grid, rec = small_setup()
    shift = 0.2   # multiple of both dt and dt_r
    s1 = forward.basis_source(spec, 0, cutoff=None)
    s2 = forward.SurfaceSource(time_fn=lambda t: s1.time_fn(t - shift),
                               space_fn=s1.space_fn, cutoff=None)
    tr1 = forward.simulate(field, s1, grid, receivers=rec)["trace"]
    tr2 = forward.simulate(field, s2, grid, receivers=rec)["trace"]
    k = int(round(shift / rec.dt_r))
    np.testing.assert_allclose(tr2[k:], tr1[:-k], atol=1e-12)


def test_snapshot_mass_in_domain_of_influence():
    # source supported in S_{tau} with tau = s: at least 99% of the final
    # state's mass lies in the eikonal domain of influence
    dx = 0.02
    field = medium.constant_speed(1.0, 2.0, 1.4, dx)
    s_tau = 0.45
    spec = basis.build_basis([1.0 - s_tau + 0.1], [0.0], a=345.4, T=1.0,
                             dt_q=0.01, dx_q=0.05, gamma_margin=0.2)
    grid = forward.make_sim_grid(field, -0.1, 1.0, dt_align=0.01)
    snap = forward.final_state(field, forward.basis_source(spec, 0), grid, 1.0)
    dist = medium.eikonal_distance(field, ("surface", (-2.0, 2.0)),
                                   method="sweeping")
    margin = 4 / np.sqrt(345.4) + 2 * dx
    inside = dist.values < s_tau + margin
    w = forward.interior_weights(field)
    total = np.sum(w * snap.values ** 2)
    outside = np.sum(w * snap.values ** 2 * ~inside)
    assert outside < 0.01 * total


def test_lateral_shift_matches_direct():
    field = medium.constant_speed(1.0, 2.2, 1.2, 0.0125)
    spec = basis.build_basis([0.3, 0.5], [-0.4, 0.0, 0.4], a=345.4, T=1.0,
                             dt_q=0.005, dx_q=0.025, gamma_margin=0.2)
    grid = forward.make_sim_grid(field, -0.1, 2.0, dt_align=0.005)
    rec = forward.ReceiverSpec(-1.5, 1.5, 0.025, 0.005, 2.0)
    t_direct = forward.record_ndmap(field, spec, grid, rec, lateral_shift=False)
    t_shift = forward.record_ndmap(field, spec, grid, rec, lateral_shift=True)
    scale = np.abs(t_direct.trace(0)).max()
    for n in range(spec.size):
        assert np.abs(t_direct.trace(n) - t_shift.trace(n)).max() < 1e-12 * scale
    # final states as well
    st_direct = forward.final_state(field, forward.basis_source(spec, 4),
                                    grid, 1.0).values
    st_shift = forward.final_states_for_basis(field, spec, grid, 1.0,
                                              indices=[4])[0]
    assert np.abs(st_direct - st_shift).max() < 1e-12 * np.abs(st_direct).max()


def test_lateral_shift_rejected_for_varying_medium():
    field = medium.lens_speed(2.2, 1.2, 0.0125)
    spec = basis.build_basis([0.3], [0.0], a=345.4, T=1.0, dt_q=0.005,
                             dx_q=0.025, gamma_margin=0.2)
    grid = forward.make_sim_grid(field, -0.1, 2.0, dt_align=0.005)
    rec = forward.ReceiverSpec(-1.5, 1.5, 0.025, 0.005, 2.0)
    with pytest.raises(ConfigurationError):
        forward.record_ndmap(field, spec, grid, rec, lateral_shift=True)


def test_parallel_matches_serial():
    field = medium.constant_speed(1.0, 1.6, 1.0, 0.025)
    spec = basis.build_basis([0.3, 0.5], [-0.1, 0.1], a=345.4, T=1.0,
                             dt_q=0.01, dx_q=0.05, gamma_margin=0.2)
    grid = forward.make_sim_grid(field, -0.1, 2.0, dt_align=0.01)
    rec = forward.ReceiverSpec(-1.0, 1.0, 0.05, 0.01, 2.0)
    serial = forward.record_ndmap(field, spec, grid, rec, lateral_shift=False,
                                  workers=1)
    try:
        parallel = forward.record_ndmap(field, spec, grid, rec,
                                        lateral_shift=False, workers=2)
    except (OSError, PermissionError) as exc:  # pragma: no cover
        pytest.skip(f"process pool unavailable: {exc}")
    for n in range(spec.size):
        scale = max(np.abs(serial.trace(n)).max(), 1e-30)
        assert np.abs(serial.trace(n) - parallel.trace(n)).max() <= 1e-12 * scale


def test_receiver_bounds_checked():
    field, spec, grid, _ = small_setup()
    rec = forward.ReceiverSpec(-5.0, 5.0, 0.05, 0.01, 2.0)
    with pytest.raises(ConfigurationError):
        forward.simulate(field, forward.basis_source(spec, 0), grid,
                         receivers=rec)


def test_dt_snapping():
    field = medium.constant_speed(1.0, 1.0, 1.0, 0.025)
    grid = forward.make_sim_grid(field, -0.1, 2.0, dt_align=0.01)
    assert grid.dt == pytest.approx(0.01)
    grid2 = forward.make_sim_grid(field, 0.0, 2.0, cfl_limit=0.3, dt_align=0.01)
    assert grid2.dt == pytest.approx(0.005)
    assert (0.01 / grid2.dt) == pytest.approx(round(0.01 / grid2.dt))
