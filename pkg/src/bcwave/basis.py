"""Gaussian space-time source basis over the source window [0, T] x Gamma.

Each basis function is a separable normalized Gaussian
phi[i, j](t, x) = C[i, j] * exp(-a ((t - tc[i])^2 + (x - xc[j])^2)),
with centers on a uniform lattice.  All inner products are trapezoid-rule
quadratures on a fixed fine lattice (the receiver sampling lattice), and the
normalization constants are chosen so every function has unit L2 norm under
that same quadrature.  Separability makes the Gram matrix an exact Kronecker
product, which the solver path exploits throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import erf

from .errors import ConfigurationError, NumericalError

__all__ = [
    "BasisSpec",
    "GramMatrix",
    "CoeffVector",
    "build_basis",
    "gram",
    "project",
    "ricker_decomposition_errors",
]


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass(eq=False)
class BasisSpec:
    """Gaussian basis geometry, normalization, and quadrature lattice."""

    t_centers: np.ndarray      # source times, uniform in (0, T)
    x_centers: np.ndarray      # source positions, uniform in [-ls, ls]
    a: float                   # Gaussian width parameter
    T: float                   # end of the source window
    dt_q: float                # quadrature lattice spacing in time
    dx_q: float                # quadrature lattice spacing in space
    ct: np.ndarray = dc_field(default=None)   # per-time-row norm constants
    cx: np.ndarray = dc_field(default=None)   # per-column norm constants
    gamma_half: float = 0.0                   # Gamma = [-gamma_half, gamma_half]

    @property
    def n_t(self) -> int:
        return self.t_centers.size

    @property
    def n_x(self) -> int:
        return self.x_centers.size

    @property
    def size(self) -> int:
        return self.n_t * self.n_x

    # index mapping: flat m = i * n_x + j  (time-major)
    def flat_index(self, i: int, j: int) -> int:
        return i * self.n_x + j

    def unflatten(self, m) -> tuple[np.ndarray, np.ndarray]:
        m = np.asarray(m)
        return m // self.n_x, m % self.n_x

    # --- quadrature lattices -------------------------------------------------
    def t_lattice(self) -> np.ndarray:
        n = int(round(self.T / self.dt_q)) + 1
        return self.dt_q * np.arange(n)

    def x_lattice(self) -> np.ndarray:
        n = int(round(2 * self.gamma_half / self.dx_q)) + 1
        return -self.gamma_half + self.dx_q * np.arange(n)

    # --- profiles ------------------------------------------------------------
    def time_profiles(self, ts: np.ndarray, cutoff: float | None = None) -> np.ndarray:
        """Normalized time factors sampled at ts; shape (len(ts), n_t).

        With a cutoff, samples beyond it are zero (the zero-extension used
        when a source defined on [0, T] is embedded in a longer window)."""
        ts = np.asarray(ts, float)
        prof = np.exp(-self.a * (ts[:, None] - self.t_centers[None, :]) ** 2)
        prof *= self.ct[None, :]
        if cutoff is not None:
            prof[ts > cutoff + 1e-12] = 0.0
        return prof

    def space_profiles(self, xs: np.ndarray) -> np.ndarray:
        """Normalized space factors sampled at xs; shape (len(xs), n_x)."""
        xs = np.asarray(xs, float)
        prof = np.exp(-self.a * (xs[:, None] - self.x_centers[None, :]) ** 2)
        return prof * self.cx[None, :]

    def time_profile_d2(self, ts: np.ndarray, cutoff: float | None = None) -> np.ndarray:
        """Second time derivatives (Ricker profiles) of the time factors."""
        ts = np.asarray(ts, float)
        u = ts[:, None] - self.t_centers[None, :]
        prof = (4 * self.a ** 2 * u ** 2 - 2 * self.a) * np.exp(-self.a * u ** 2)
        prof *= self.ct[None, :]
        if cutoff is not None:
            prof[ts > cutoff + 1e-12] = 0.0
        return prof

    def time_tail_integrals(self, ts: np.ndarray) -> np.ndarray:
        """Exact integrals int_{T-t}^{T} g_i(sigma) dsigma, shape (len(ts), n_t).

        This is the time factor of R J applied to a zero-extended source, and
        is evaluated in closed form."""
        ts = np.asarray(ts, float)
        sa = np.sqrt(self.a)
        hi = erf(sa * (self.T - self.t_centers))[None, :]
        lo = erf(sa * ((self.T - ts)[:, None] - self.t_centers[None, :]))
        return self.ct[None, :] * np.sqrt(np.pi / self.a) / 2.0 * (hi - lo)


def build_basis(t_centers, x_centers, a: float, T: float,
                dt_q: float, dx_q: float, gamma_margin: float = 0.0) -> BasisSpec:
    """Construct the normalized basis; norms use the trapezoid rule on the
    (dt_q, dx_q) lattice over [0, T] x Gamma.

    Gamma spans the outermost source centers plus gamma_margin on each side
    (rounded up to the quadrature lattice).  With zero margin the edge
    columns are half-Gaussians normalized on the window; a margin of a few
    Gaussian widths keeps every source numerically supported inside Gamma.
    """
    t_centers = np.asarray(t_centers, float)
    x_centers = np.asarray(x_centers, float)
    if a <= 0 or T <= 0 or dt_q <= 0 or dx_q <= 0:
        raise ConfigurationError("basis parameters must be positive")
    if t_centers.size == 0 or x_centers.size == 0:
        raise ConfigurationError("basis center ranges are degenerate")
    if t_centers.min() <= 0 or t_centers.max() >= T:
        raise ConfigurationError("source times must lie strictly inside (0, T)")
    half = max(abs(x_centers[0]), abs(x_centers[-1]))
    if gamma_margin > 0:
        half += np.ceil(gamma_margin / dx_q) * dx_q
    spec = BasisSpec(t_centers=t_centers, x_centers=x_centers, a=a, T=T,
                     dt_q=dt_q, dx_q=dx_q, gamma_half=float(half))
    spec.ct = np.ones(t_centers.size)
    spec.cx = np.ones(x_centers.size)
    ts, xs = spec.t_lattice(), spec.x_lattice()
    wt = trapezoid_weights(ts.size, dt_q)
    wx = trapezoid_weights(xs.size, dx_q)
    gt = spec.time_profiles(ts)
    gx = spec.space_profiles(xs)
    spec.ct = 1.0 / np.sqrt(wt @ gt ** 2)
    spec.cx = 1.0 / np.sqrt(wx @ gx ** 2)
    return spec


@dataclass(eq=False)
class GramMatrix:
    """Gram matrix of the basis as an exact Kronecker product gt (x) gx,
    with cached Cholesky factors of both factors."""

    gt: np.ndarray
    gx: np.ndarray
    _cho_t: tuple = dc_field(default=None, repr=False)
    _cho_x: tuple = dc_field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.gt.shape[0] * self.gx.shape[0]

    def dense(self) -> np.ndarray:
        return np.kron(self.gt, self.gx)

    def _factors(self):
        if self._cho_t is None:
            try:
                self._cho_t = cho_factor(self.gt)
                self._cho_x = cho_factor(self.gx)
            except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded by jitter
                raise NumericalError(f"Gram factorization failed: {exc}") from exc
        return self._cho_t, self._cho_x

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve G f = rhs; rhs indexed flat (time-major) in its leading axis."""
        ct, cx = self._factors()
        nt, nx = self.gt.shape[0], self.gx.shape[0]
        extra = rhs.shape[1:]
        r = rhs.reshape(nt, nx, -1)
        r = cho_solve(ct, r.reshape(nt, -1)).reshape(nt, nx, -1)
        r = np.moveaxis(r, 1, 0)
        r = cho_solve(cx, r.reshape(nx, -1)).reshape(nx, nt, -1)
        out = np.moveaxis(r, 0, 1).reshape(nt * nx, *extra)
        return out


def gram(spec: BasisSpec, jitter: float | None = None) -> GramMatrix:
    """Assemble the Gram matrix on the quadrature lattice.

    With overlapping Gaussians the factors can be numerically near-singular;
    if factorization fails a diagonal jitter of 1e-12 * trace/n is added and
    the conditioning is reported in the raised error if that also fails.
    """
    ts, xs = spec.t_lattice(), spec.x_lattice()
    wt = trapezoid_weights(ts.size, spec.dt_q)
    wx = trapezoid_weights(xs.size, spec.dx_q)
    gt_prof = spec.time_profiles(ts)
    gx_prof = spec.space_profiles(xs)
    gt = gt_prof.T @ (wt[:, None] * gt_prof)
    gx = gx_prof.T @ (wx[:, None] * gx_prof)
    gt = 0.5 * (gt + gt.T)
    gx = 0.5 * (gx + gx.T)
    G = GramMatrix(gt=gt, gx=gx)
    try:
        G._factors()
    except (NumericalError, np.linalg.LinAlgError):
        eps = jitter if jitter is not None else 1e-12
        gt = gt + np.eye(gt.shape[0]) * eps * np.trace(gt) / gt.shape[0]
        gx = gx + np.eye(gx.shape[0]) * eps * np.trace(gx) / gx.shape[0]
        G = GramMatrix(gt=gt, gx=gx)
        try:
            G._factors()
        except NumericalError as exc:
            cond_t = np.linalg.cond(gt)
            cond_x = np.linalg.cond(gx)
            raise NumericalError(
                f"Gram factorization failed even with jitter; cond(gt)={cond_t:.3e}, "
                f"cond(gx)={cond_x:.3e}") from exc
    return G


@dataclass
class CoeffVector:
    """A source in the basis span: inner-product vector and coefficients.

    inner[m] = <f, phi_m>; coeffs solves G coeffs = inner.
    """

    inner: np.ndarray
    coeffs: np.ndarray


def project(f, spec: BasisSpec, G: GramMatrix) -> CoeffVector:
    """Project a source onto the basis by lattice quadrature.

    f may be a callable f(t, x) -> value (vectorized) or an array sampled on
    the (t_lattice, x_lattice) grid with shape (nt_lattice, nx_lattice).
    """
    ts, xs = spec.t_lattice(), spec.x_lattice()
    if callable(f):
        tt, xx = np.meshgrid(ts, xs, indexing="ij")
        samples = np.asarray(f(tt, xx), float)
    else:
        samples = np.asarray(f, float)
        if samples.shape != (ts.size, xs.size):
            raise ConfigurationError(
                f"sampled source must have shape {(ts.size, xs.size)}")
    wt = trapezoid_weights(ts.size, spec.dt_q)
    wx = trapezoid_weights(xs.size, spec.dx_q)
    gt = spec.time_profiles(ts)      # (nt_lat, n_t)
    gx = spec.space_profiles(xs)     # (nx_lat, n_x)
    inner = gt.T @ (wt[:, None] * samples * wx[None, :]) @ gx
    inner = inner.reshape(-1)
    coeffs = G.solve(inner)
    return CoeffVector(inner=inner, coeffs=coeffs)


def b_moment_vector(spec: BasisSpec) -> np.ndarray:
    """Inner products <b, phi_m> with b(t) = T - t, flat over the basis."""
    ts, xs = spec.t_lattice(), spec.x_lattice()
    wt = trapezoid_weights(ts.size, spec.dt_q)
    wx = trapezoid_weights(xs.size, spec.dx_q)
    tvec = ((spec.T - ts) * wt) @ spec.time_profiles(ts)
    xvec = wx @ spec.space_profiles(xs)
    return np.kron(tvec, xvec)


def ricker_decomposition_errors(spec: BasisSpec, start: float) -> np.ndarray:
    """Relative L2 error of reconstructing each time profile from its second
    derivative by double time integration from `start`.

    The double integral of g'' from `start` is g(t) - g(start) -
    (t - start) g'(start) exactly, so the reported error is the norm of the
    two dropped terms over [0, T] relative to the profile norm.  It decays
    rapidly once the Gaussian center moves away from `start`.
    """
    ts = spec.t_lattice()
    wt = trapezoid_weights(ts.size, spec.dt_q)
    out = np.empty(spec.n_t)
    for i, tc in enumerate(spec.t_centers):
        g = spec.ct[i] * np.exp(-spec.a * (ts - tc) ** 2)
        g0 = spec.ct[i] * np.exp(-spec.a * (start - tc) ** 2)
        gp0 = -2 * spec.a * (start - tc) * g0
        resid = g0 + (ts - start) * gp0
        out[i] = np.sqrt(wt @ resid ** 2) / np.sqrt(wt @ g ** 2)
    return out
