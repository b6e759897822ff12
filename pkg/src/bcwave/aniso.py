"""Metric recovery from internal data in semi-geodesic coordinates.

The internal data operator maps a boundary source to its final-time
wavefield sampled along the normal-geodesic coordinate grid.  Because the
wave equation is time-translation invariant, applying it to the second time
derivative of a source samples the Laplace-Beltrami image of the original
wavefield; combining such samples for the targets {x^j x^k, x^j, x^k}
through the product identity

    g^{jk} = (lap_g(x^j x^k) - x^k lap_g x^j - x^j lap_g x^k) / 2

recovers the contravariant metric components on a chart, via Tikhonov
normal equations for the source-finding step.

Two sampling modes exist: "oracle" interpolates simulated final states at
ground-truth geodesic points (validation), "data" drives the wave-cap ratio
estimators so that only boundary data enters.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .basis import BasisSpec, GramMatrix, trapezoid_weights
from .boundary_ops import ConnectingMatrix
from .errors import ConfigurationError, NumericalError
from .medium import SpeedField, eval_speed_clamped, trace_geodesic
from . import forward

__all__ = [
    "InternalDataTable",
    "MetricSamples",
    "sample_Lg_oracle",
    "sample_Lg_data",
    "recover_metric",
    "laplacian_identity_check",
    "metric_oracle_from_geodesics",
    "quintic_bump",
]


@dataclass(eq=False)
class InternalDataTable:
    """Samples of the internal data operator on a semi-geodesic grid.

    L[p, n] = u^{phi_n}(T, x(y_p, s_p)) over valid grid points p (flattened
    row-major over (ys, ss)); Ltt holds the same for the twice-differentiated
    sources.  Linear in the source by construction.
    """

    ys: np.ndarray
    ss: np.ndarray
    L: np.ndarray
    Ltt: np.ndarray
    valid: np.ndarray            # (n_y, n_s) bool
    mode: str
    points: np.ndarray | None = None   # oracle-mode chart positions

    @property
    def n_points(self) -> int:
        return self.L.shape[0]


def _chart_points(field: SpeedField, ys, ss, ds: float):
    """Geodesic images of the grid; grid nodes beyond a path's reach are
    excluded with a diagnostic flag."""
    ys = np.asarray(ys, float)
    ss = np.asarray(ss, float)
    pts = np.full((ys.size, ss.size, 2), np.nan)
    valid = np.zeros((ys.size, ss.size), dtype=bool)
    for i, y in enumerate(ys):
        path = trace_geodesic(field, y, float(ss.max()) + 2 * ds, ds)
        for j, s in enumerate(ss):
            if s <= path.s[-1]:
                pts[i, j] = path.position(s)
                valid[i, j] = True
    return pts, valid


def sample_Lg_oracle(field: SpeedField, spec: BasisSpec, grid, ys, ss,
                     ds: float | None = None, chunk: int = 64) -> InternalDataTable:
    """Ground-truth internal data: simulate each basis source (and its
    second time derivative) and interpolate the final states at the traced
    geodesic points.  Simulations run in chunks so only a slice of the
    interior states is held at a time."""
    if ds is None:
        ds = min(field.spacing) / 2
    pts, valid = _chart_points(field, ys, ss, ds)
    flat_pts = pts.reshape(-1, 2)[valid.reshape(-1)]
    L = np.empty((flat_pts.shape[0], spec.size))
    Ltt = np.empty_like(L)
    for out, builder in ((L, None), (Ltt, forward.ricker_basis_source)):
        for lo in range(0, spec.size, chunk):
            idx = np.arange(lo, min(lo + chunk, spec.size))
            states = forward.final_states_for_basis(field, spec, grid, spec.T,
                                                    indices=idx,
                                                    source_builder=builder)
            out[:, idx] = _interp_states(field, states, flat_pts)
    return InternalDataTable(ys=np.asarray(ys, float), ss=np.asarray(ss, float),
                             L=L, Ltt=Ltt, valid=valid, mode="oracle", points=pts)


def _interp_states(field: SpeedField, states: np.ndarray, pts: np.ndarray) -> np.ndarray:
    from .medium import _bilinear
    out = np.empty((pts.shape[0], states.shape[0]))
    for n in range(states.shape[0]):
        out[:, n] = _bilinear(states[n], field.origin, field.spacing, pts, clamp=True)
    return out


def sample_Lg_data(K: ConnectingMatrix, spec: BasisSpec, G: GramMatrix,
                   caps: list, valid: np.ndarray, ys, ss) -> InternalDataTable:
    """Boundary-data internal data: point values of every basis wavefield via
    the wave-cap ratio estimators.

    caps is the flattened list of CapSource objects for the valid grid
    points.  The table for the twice-differentiated sources projects the
    analytic Ricker profiles onto the basis (a time-axis contraction, since
    the Gram is separable)."""
    ts = spec.t_lattice()
    wt = trapezoid_weights(ts.size, spec.dt_q)
    Bt = spec.time_profiles(ts)
    Btt = spec.time_profile_d2(ts)
    time_tt = Bt.T @ (wt[:, None] * Btt)            # <d2t g_k, g_i>
    ct_fac, _ = G._factors()
    Ft = cho_solve(ct_fac, time_tt)                 # gt^{-1} (n_t x n_t)

    P = len(caps)
    L = np.empty((P, spec.size))
    for p, cs in enumerate(caps):
        if abs(cs.volume) < 1e-14:
            raise NumericalError("degenerate cap in data-mode internal table")
        L[p] = (cs.psi @ K.matrix) / cs.volume
    Lr = L.reshape(P, spec.n_t, spec.n_x)
    Ltt = np.einsum("mpl,pk->mkl", Lr, Ft).reshape(P, spec.size)
    return InternalDataTable(ys=np.asarray(ys, float), ss=np.asarray(ss, float),
                             L=L, Ltt=Ltt, valid=np.asarray(valid), mode="data")


@dataclass(eq=False)
class MetricSamples:
    """Contravariant metric components in local semi-geodesic coordinates on
    the chart where the cutoff is identically one."""

    ys: np.ndarray
    ss: np.ndarray
    gyy: np.ndarray
    gys: np.ndarray
    gss: np.ndarray
    diagnostics: dict = dc_field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("y,s,gyy,gys,gss\n")
            for i, y in enumerate(self.ys):
                for j, s in enumerate(self.ss):
                    fh.write(f"{y:.10g},{s:.10g},{self.gyy[i, j]:.10g},"
                             f"{self.gys[i, j]:.10g},{self.gss[i, j]:.10g}\n")


def quintic_bump(t: np.ndarray) -> np.ndarray:
    """C^2 polynomial blend: 1 for t <= 0, 0 for t >= 1, quintic in between."""
    t = np.clip(t, 0.0, 1.0)
    return 1.0 - (10 * t ** 3 - 15 * t ** 4 + 6 * t ** 5)


def _bump_2d(ys, ss, margin_cells: int):
    """Separable cutoff equal to one on the interior chart, falling to zero
    over a margin of grid cells at each edge."""
    def edge_profile(v):
        n = v.size
        m = margin_cells
        prof = np.ones(n)
        idx = np.arange(n)
        left = (m - idx) / m
        right = (idx - (n - 1 - m)) / m
        prof = quintic_bump(np.maximum(left, right))
        return prof
    return np.outer(edge_profile(np.asarray(ys)), edge_profile(np.asarray(ss)))


def recover_metric(table: InternalDataTable, alpha: float,
                   margin_cells: int = 3,
                   trim_cells: int | None = None,
                   smooth_cells: float = 0.0) -> MetricSamples:
    """Tikhonov recovery of the contravariant metric from an internal-data
    table.

    For each index pair the three targets (product, and the two coordinate
    factors) are cut off by a quintic bump with the given margin; the normal
    equations share one factorization.  g^{ys} = g^{sy} holds exactly
    because the pair shares its solves.

    The metric is reported on the plateau where the cutoff is identically
    one, shrunk by a further trim_cells on each side (default: the margin
    width again): the Tikhonov misfit concentrates near the cutoff
    transition, where the targets are roughest, and its Laplacian bleeds a
    few cells into the plateau.

    With smooth_cells > 0 the recovered fields are reported as local
    weighted averages (Gaussian kernel of that many grid cells).  The
    underlying convergence of the sampled Laplacians holds in a weak norm
    only, and the misfit ripple at the source-lattice wavelength dominates
    raw pointwise values; averaging at the basis resolution is the weak-form
    evaluation consistent with that guarantee.
    """
    if alpha <= 0:
        raise ConfigurationError("alpha must be positive")
    ys, ss = table.ys, table.ss
    valid = table.valid.reshape(-1)
    if not np.all(valid):
        raise ConfigurationError(
            "metric recovery requires a fully valid internal-data grid")
    wy = trapezoid_weights(ys.size, ys[1] - ys[0])
    ws = trapezoid_weights(ss.size, ss[1] - ss[0])
    W = np.outer(wy, ws).reshape(-1)

    # centered local coordinates and the cutoff
    yc = (ys - ys.mean())[:, None] + 0 * ss[None, :]
    sc = 0 * ys[:, None] + (ss - ss.mean())[None, :]
    bump = _bump_2d(ys, ss, margin_cells)
    targets = {
        "y": (yc * bump).reshape(-1),
        "s": (sc * bump).reshape(-1),
        "yy": (yc * yc * bump).reshape(-1),
        "ys": (yc * sc * bump).reshape(-1),
        "ss": (sc * sc * bump).reshape(-1),
    }

    L, Ltt = table.L, table.Ltt
    A = L.T @ (W[:, None] * L)
    A += alpha * np.eye(A.shape[0])
    try:
        fac = cho_factor(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"normal equations not positive definite at alpha={alpha:.3e}; "
            f"the internal-data table may be rank deficient") from exc
    lap = {}
    for name, tgt in targets.items():
        f_hat = cho_solve(fac, L.T @ (W * tgt))
        lap[name] = Ltt @ f_hat        # samples of lap_g(target) on the grid

    if smooth_cells > 0:
        from scipy.ndimage import gaussian_filter
        shape2 = (ys.size, ss.size)
        for name in lap:
            lap[name] = gaussian_filter(lap[name].reshape(shape2), smooth_cells,
                                        mode="nearest").reshape(-1)

    yv = yc.reshape(-1)
    sv = sc.reshape(-1)
    g_yy = 0.5 * (lap["yy"] - 2 * yv * lap["y"])
    g_ys = 0.5 * (lap["ys"] - sv * lap["y"] - yv * lap["s"])
    g_ss = 0.5 * (lap["ss"] - 2 * sv * lap["s"])

    # report inside the plateau, away from the transition bleed
    m = margin_cells + (margin_cells if trim_cells is None else trim_cells)
    if 2 * m >= ys.size - 1 or 2 * m >= ss.size - 1:
        raise ConfigurationError("chart too small for the cutoff margin and trim")
    sl_y = slice(m, ys.size - m)
    sl_s = slice(m, ss.size - m)
    shape = (ys.size, ss.size)
    return MetricSamples(
        ys=ys[sl_y], ss=ss[sl_s],
        gyy=g_yy.reshape(shape)[sl_y, sl_s].copy(),
        gys=g_ys.reshape(shape)[sl_y, sl_s].copy(),
        gss=g_ss.reshape(shape)[sl_y, sl_s].copy(),
        diagnostics={"alpha": alpha, "margin_cells": margin_cells,
                     "report_margin_cells": m})


def metric_oracle_from_geodesics(field: SpeedField, ys, ss, dy: float = 2e-3,
                                 ds: float = 1e-3) -> MetricSamples:
    """Ground-truth contravariant metric in semi-geodesic coordinates.

    The pullback of c^-2 dx^2 under the normal-geodesic chart has
    g_ss = 1 and g_ys = 0 exactly; g_yy is |d Phi/dy|^2 / c^2 with the
    Jacobian from central differences of neighboring geodesics, so
    g^{yy} = c(Phi)^2 / |d Phi/dy|^2.
    """
    ys = np.asarray(ys, float)
    ss = np.asarray(ss, float)
    s_max = float(ss.max()) + 2 * ds
    gyy = np.empty((ys.size, ss.size))
    for i, y in enumerate(ys):
        p_plus = trace_geodesic(field, y + dy, s_max, ds)
        p_minus = trace_geodesic(field, y - dy, s_max, ds)
        path = trace_geodesic(field, y, s_max, ds)
        for j, s in enumerate(ss):
            dphi = (p_plus.position(s) - p_minus.position(s)) / (2 * dy)
            c = eval_speed_clamped(field, path.position(s))
            gyy[i, j] = c ** 2 / float(dphi @ dphi)
    return MetricSamples(ys=ys, ss=ss, gyy=gyy,
                         gys=np.zeros_like(gyy), gss=np.ones_like(gyy))


# ---------------------------------------------------------------------------
# Laplace-Beltrami identity check on synthetic metrics
# ---------------------------------------------------------------------------

def _laplace_beltrami_grid(g_fn, xs, zs, u: np.ndarray) -> np.ndarray:
    """Divergence-form finite-difference Laplace-Beltrami of grid samples u
    for a metric given analytically as g_fn(x, z) -> (2, 2) covariant
    components (vectorized over grids)."""
    X, Z = np.meshgrid(xs, zs, indexing="ij")
    g = g_fn(X, Z)                                   # (..., 2, 2)
    det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] * g[..., 1, 0]
    if np.any(det <= 0):
        raise ConfigurationError("metric is not positive definite on the grid")
    alpha = np.sqrt(det)
    inv00 = g[..., 1, 1] / det
    inv01 = -g[..., 0, 1] / det
    inv11 = g[..., 0, 0] / det
    dx = xs[1] - xs[0]
    dz = zs[1] - zs[0]
    ux = np.gradient(u, dx, axis=0)
    uz = np.gradient(u, dz, axis=1)
    f1 = alpha * (inv00 * ux + inv01 * uz)
    f2 = alpha * (inv01 * ux + inv11 * uz)
    out = (np.gradient(f1, dx, axis=0) + np.gradient(f2, dz, axis=1)) / alpha
    return out


def laplacian_identity_check(g_fn, window, ns=(33, 65, 129)) -> dict:
    """Residual of the product identity for a synthetic metric.

    Evaluates g^{lk} - (lap_g(x^l x^k) - x^k lap_g x^l - x^l lap_g x^k)/2 by
    finite differences on nested grids over the window (x0, x1, z0, z1) and
    reports max interior residuals and the empirical convergence order.
    """
    x0, x1, z0, z1 = window
    residuals = []
    hs = []
    for n in ns:
        xs = np.linspace(x0, x1, n)
        zs = np.linspace(z0, z1, n)
        X, Z = np.meshgrid(xs, zs, indexing="ij")
        g = g_fn(X, Z)
        det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] * g[..., 1, 0]
        ginv = np.empty_like(g)
        ginv[..., 0, 0] = g[..., 1, 1] / det
        ginv[..., 0, 1] = ginv[..., 1, 0] = -g[..., 0, 1] / det
        ginv[..., 1, 1] = g[..., 0, 0] / det
        coords = {0: X, 1: Z}
        res_max = 0.0
        for (l, k) in ((0, 0), (0, 1), (1, 1)):
            lap_lk = _laplace_beltrami_grid(g_fn, xs, zs, coords[l] * coords[k])
            lap_l = _laplace_beltrami_grid(g_fn, xs, zs, coords[l])
            lap_k = _laplace_beltrami_grid(g_fn, xs, zs, coords[k])
            lhs = 0.5 * (lap_lk - coords[k] * lap_l - coords[l] * lap_k)
            resid = lhs - ginv[..., l, k]
            trim = 2
            res_max = max(res_max, float(np.abs(resid[trim:-trim, trim:-trim]).max()))
        residuals.append(res_max)
        hs.append(xs[1] - xs[0])
    orders = [float(np.log(residuals[i] / residuals[i + 1])
                    / np.log(hs[i] / hs[i + 1]))
              for i in range(len(ns) - 1)
              if residuals[i + 1] > 0]
    return {"ns": list(ns), "h": hs, "max_residual": residuals, "orders": orders}
