"""Internal data extraction and wave-speed recovery.

The pairing B(f, phi) = <f, b phi> - <trace f, b dphi> (with b(t) = T - t and
dphi the surface normal derivative of a harmonic phi) equals the final-time
inner product <u^f(T), phi> in the c^-2-weighted measure, so ratios of B
values against wave-cap sources sample harmonic functions at interior points
without knowing the medium.  Applying this to the Cartesian coordinate
functions traces out the semi-geodesic coordinate transform; differentiating
the transform along the normal-ray parameter with a smoothing spline yields
the wave speed at the estimated points.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.interpolate import CubicSpline, make_smoothing_spline

from .basis import BasisSpec, trapezoid_weights
from .boundary_ops import ConnectingMatrix
from .control import BoundaryDistances, CapSpec, CapSource, cap_source
from .errors import ConfigurationError, DegenerateCapError
from .forward import TraceSet

__all__ = [
    "HarmonicFunction",
    "harmonic",
    "harmonic_polynomial",
    "BVectors",
    "build_b_vectors",
    "b_functional",
    "point_value_harmonic",
    "point_value_wavefield",
    "TransformSamples",
    "build_transform",
    "speed_from_transform",
]


@dataclass(frozen=True)
class HarmonicFunction:
    """A harmonic test function with its surface normal-derivative profile.

    phi(x, z) evaluates in the interior (oracle use); dn(x) is the outward
    normal derivative dphi/dz on the surface z = 0, which is all the
    boundary pairing needs.
    """

    tag: str
    phi: callable
    dn: callable


def harmonic(tag: str) -> HarmonicFunction:
    """Built-in harmonic functions: constants and coordinate functions."""
    if tag in ("1", "one"):
        return HarmonicFunction("1", lambda x, z: np.ones_like(np.asarray(x, float)),
                                lambda x: np.zeros_like(np.asarray(x, float)))
    if tag == "x1":
        return HarmonicFunction("x1", lambda x, z: np.asarray(x, float),
                                lambda x: np.zeros_like(np.asarray(x, float)))
    if tag == "x2":
        return HarmonicFunction("x2", lambda x, z: np.asarray(z, float) + 0 * np.asarray(x),
                                lambda x: np.ones_like(np.asarray(x, float)))
    raise ConfigurationError(f"unknown harmonic tag: {tag}")


def harmonic_polynomial(coeffs) -> HarmonicFunction:
    """Harmonic polynomial sum c[i,j] x^i z^j; harmonicity checked symbolically."""
    import sympy as sp

    coeffs = np.asarray(coeffs, float)
    xs, zs = sp.symbols("x z")
    expr = sum(coeffs[i, j] * xs ** i * zs ** j
               for i in range(coeffs.shape[0]) for j in range(coeffs.shape[1]))
    if sp.simplify(sp.diff(expr, xs, 2) + sp.diff(expr, zs, 2)) != 0:
        raise ConfigurationError("polynomial is not harmonic")
    phi_fn = sp.lambdify((xs, zs), expr, "numpy")
    dn_expr = sp.diff(expr, zs).subs(zs, 0)
    dn_fn = sp.lambdify(xs, dn_expr, "numpy")
    return HarmonicFunction(
        tag="poly",
        phi=lambda x, z: np.broadcast_to(np.asarray(phi_fn(x, z), float),
                                         np.broadcast(x, z).shape).copy(),
        dn=lambda x: np.broadcast_to(np.asarray(dn_fn(x), float),
                                     np.shape(x)).copy())


@dataclass(eq=False)
class BVectors:
    """Per-basis-function values of the boundary pairing, one vector per
    harmonic: vec[tag][n] = B(phi_n, harmonic).  B is then linear in the
    source coefficients."""

    tags: list
    vectors: dict

    def __getitem__(self, tag: str) -> np.ndarray:
        return self.vectors[tag]


def build_b_vectors(traces: TraceSet, spec: BasisSpec, phis) -> BVectors:
    """Assemble B(phi_n, phi) for every basis function and harmonic.

    The source-side term uses the separable basis quadrature on [0,T] x
    Gamma; the trace-side term integrates each recorded trace against
    b(t) dphi(x) over [0, T] and the full receiver span (one pass over the
    trace set, skipped entirely when every dphi vanishes).
    """
    phis = [harmonic(p) if isinstance(p, str) else p for p in phis]
    ts_l, xs_l = spec.t_lattice(), spec.x_lattice()
    wt_l = trapezoid_weights(ts_l.size, spec.dt_q)
    wx_l = trapezoid_weights(xs_l.size, spec.dx_q)
    tw = np.einsum("t,t,ti->i", wt_l, spec.T - ts_l, spec.time_profiles(ts_l))
    Bx = spec.space_profiles(xs_l)

    vectors = {}
    trace_needed = []
    for hf in phis:
        src = np.kron(tw, np.einsum("x,x,xj->j", wx_l,
                                    hf.phi(xs_l, np.zeros_like(xs_l)), Bx))
        vectors[hf.tag] = src
        if np.any(hf.dn(xs_l) != 0):
            trace_needed.append(hf)

    if trace_needed:
        rec = traces.receivers
        rec_xs, rec_ts = rec.xs, rec.ts
        n_t = int(round(spec.T / rec.dt_r)) + 1
        wt = trapezoid_weights(n_t, rec.dt_r)
        wx = trapezoid_weights(rec_xs.size, rec.dx_r)
        bt = wt * (spec.T - rec_ts[:n_t])
        profiles = {hf.tag: wx * hf.dn(rec_xs) for hf in trace_needed}
        for n, tr in traces.traces():
            blk = tr[:n_t]
            for tag, prof in profiles.items():
                vectors[tag][n] -= float(bt @ blk @ prof)
    return BVectors(tags=[hf.tag for hf in phis], vectors=vectors)


def b_functional(coeffs: np.ndarray, bvectors: BVectors, tag: str) -> float:
    """B(f, phi) for a source with the given basis coefficients."""
    return float(coeffs @ bvectors[tag])


def point_value_harmonic(psi: CapSource, bvectors: BVectors, tag: str,
                         vol_floor: float = 1e-14) -> float:
    """Ratio estimator B(psi, phi) / B(psi, 1) ~ phi at the cap's interior
    point (empirically the point at depth parameter s + h/2)."""
    denom = b_functional(psi.psi, bvectors, "1")
    if abs(denom) < vol_floor:
        raise DegenerateCapError(
            f"cap at (y={psi.cap.y}, s={psi.cap.s}) has near-zero volume scalar")
    return b_functional(psi.psi, bvectors, tag) / denom


def point_value_wavefield(psi: CapSource, fcoeffs: np.ndarray,
                          K: ConnectingMatrix, vol_floor: float = 1e-14) -> float:
    """<psi, K f> / <psi, [b_tau2]>: samples u^f(T, .) at the cap point."""
    if abs(psi.volume) < vol_floor:
        raise DegenerateCapError(
            f"cap at (y={psi.cap.y}, s={psi.cap.s}) has near-zero volume scalar")
    return float(psi.psi @ (K.matrix @ fcoeffs)) / psi.volume


@dataclass(eq=False)
class TransformSamples:
    """Estimated semi-geodesic coordinate transform on a grid.

    points[i, j] is the estimated Cartesian image of grid node (y_i, s_j);
    speeds[i, j] is filled by speed_from_transform.  flags marks degenerate
    grid points (excluded from downstream fits, never interpolated over).
    """

    ys: np.ndarray
    ss: np.ndarray
    h: float
    points: np.ndarray                  # (n_y, n_s, 2)
    volumes: np.ndarray                 # (n_y, n_s)
    flags: np.ndarray                   # (n_y, n_s) bool, True = degenerate
    speeds: np.ndarray | None = None    # (n_y, n_s)
    spline_residual: np.ndarray | None = None   # per-column fit diagnostics
    diagnostics: dict = dc_field(default_factory=dict)

    def monotone_depth_fraction(self) -> float:
        """Fraction of columns whose estimated depth strictly decreases in s."""
        good = 0
        total = 0
        for i in range(self.ys.size):
            ok = ~self.flags[i]
            if ok.sum() < 2:
                continue
            total += 1
            good += bool(np.all(np.diff(self.points[i, ok, 1]) < 0))
        return good / total if total else float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("y,s,phi1,phi2,c_est,volume,flag\n")
            for i, y in enumerate(self.ys):
                for j, s in enumerate(self.ss):
                    c = self.speeds[i, j] if self.speeds is not None else np.nan
                    fh.write(f"{y:.10g},{s:.10g},{self.points[i, j, 0]:.10g},"
                             f"{self.points[i, j, 1]:.10g},{c:.10g},"
                             f"{self.volumes[i, j]:.10g},{int(self.flags[i, j])}\n")


def build_transform(K: ConnectingMatrix, spec: BasisSpec, bvectors: BVectors,
                    ys, ss, h: float, bdist_fn, alpha: float | None = None,
                    progress=None) -> TransformSamples:
    """Estimate the coordinate transform at every grid node (y_i, s_j).

    bdist_fn(y) supplies the boundary-distance table for a cap center (one
    eikonal solve per column, shared across depths).  Degenerate caps are
    flagged and skipped; reconstruction continues.
    """
    ys = np.asarray(ys, float)
    ss = np.asarray(ss, float)
    pts = np.full((ys.size, ss.size, 2), np.nan)
    vols = np.full((ys.size, ss.size), np.nan)
    flags = np.ones((ys.size, ss.size), dtype=bool)
    for i, y in enumerate(ys):
        bdist = bdist_fn(y)
        for j, s in enumerate(ss):
            try:
                cs = cap_source(K, spec, CapSpec(y=y, s=s, h=h, alpha=alpha), bdist)
                pts[i, j, 0] = point_value_harmonic(cs, bvectors, "x1")
                pts[i, j, 1] = point_value_harmonic(cs, bvectors, "x2")
                vols[i, j] = cs.volume
                flags[i, j] = False
            except DegenerateCapError:
                pass
        if progress:
            progress(i + 1, ys.size)
    return TransformSamples(ys=ys, ss=ss, h=h, points=pts, volumes=vols,
                            flags=flags)


def speed_from_transform(samples: TransformSamples, lam: float | None = None,
                         min_points: int = 4) -> TransformSamples:
    """Differentiate the estimated transform along s and fill in speeds.

    Each coordinate of each y-column is fit with a cubic smoothing spline
    over s (generalized cross-validation chooses the penalty unless lam is
    given) and differentiated at the grid depths; the speed estimate is the
    Euclidean norm of the derivative.  Columns with fewer than min_points
    non-degenerate samples are skipped with a diagnostic.
    """
    ys, ss = samples.ys, samples.ss
    speeds = np.full((ys.size, ss.size), np.nan)
    resid = np.full(ys.size, np.nan)
    skipped = []
    for i in range(ys.size):
        ok = ~samples.flags[i]
        if ok.sum() < min_points:
            skipped.append(i)
            continue
        s_ok = ss[ok]
        d1 = np.empty((2, ss.size))
        r2 = 0.0
        for k in range(2):
            vals = samples.points[i, ok, k]
            if ok.sum() >= 5:
                spl = make_smoothing_spline(s_ok, vals, lam=lam)
            else:
                # smoothing-parameter selection needs five samples; a
                # four-point column gets the exact cubic interpolant
                spl = CubicSpline(s_ok, vals)
            d1[k] = spl.derivative()(ss)
            r2 += float(np.mean((spl(s_ok) - vals) ** 2))
        speeds[i] = np.hypot(d1[0], d1[1])
        speeds[i, ~ok] = np.nan
        resid[i] = np.sqrt(r2)
    samples.speeds = speeds
    samples.spline_residual = resid
    samples.diagnostics["spline_skipped_columns"] = skipped
    return samples
