"""Time-axis operators on boundary data and the connecting operator.

Working purely with recorded traces, the key object here is the matrix
[K]_{mn} = <K phi_n, phi_m> of the connecting operator K = W*W, where W maps
a boundary source to its final-time interior wavefield.  K is assembled via
the Blagovescenskii identity

    K = J L2T Theta - R LT R J Theta,

with R time reversal about T, J the integral over [t, 2T - t], Theta the
zero extension from [0, T] to [0, 2T], and L2T/LT the measured maps on the
respective windows.  Only trace manipulations appear; no interior quantity
is touched.

The [R J Theta phi] factor is separable in time and space for the Gaussian
basis, which collapses G^{-1} [RJ] to a Kronecker product; the assembly
exploits that throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .basis import BasisSpec, GramMatrix, trapezoid_weights
from .errors import ConfigurationError
from .forward import TraceSet

__all__ = [
    "ConnectingMatrix",
    "apply_R",
    "apply_J",
    "apply_I",
    "j_matrix",
    "TraceProjector",
    "assemble_K",
]


def apply_R(series: np.ndarray, axis: int = 0) -> np.ndarray:
    """Time reversal f(t) -> f(T - t) on a [0, T] sample lattice."""
    return np.flip(series, axis=axis).copy()


def j_matrix(n_2t: int, dt: float) -> np.ndarray:
    """Trapezoid weights of (J f)(t_k) = int_{t_k}^{2T - t_k} f, as a dense
    matrix mapping n_2t samples on [0, 2T] to samples on [0, T]."""
    if n_2t % 2 == 0:
        raise ConfigurationError("[0, 2T] lattice must have an odd sample count")
    n_t = (n_2t - 1) // 2 + 1
    J = np.zeros((n_t, n_2t))
    for k in range(n_t):
        hi = n_2t - 1 - k
        if hi <= k:
            continue
        J[k, k:hi + 1] = dt
        J[k, k] = J[k, hi] = 0.5 * dt
    return J


def apply_J(series: np.ndarray, dt: float, axis: int = 0) -> np.ndarray:
    """Evaluate (J f)(t) = int_t^{2T-t} f(s) ds on the sample lattice."""
    series = np.moveaxis(np.asarray(series, float), axis, 0)
    J = j_matrix(series.shape[0], dt)
    out = np.tensordot(J, series, axes=(1, 0))
    return np.moveaxis(out, 0, axis)


def apply_I(series: np.ndarray, dt: float, axis: int = 0) -> np.ndarray:
    """Cumulative trapezoid integral from the first sample."""
    return cumulative_trapezoid(series, dx=dt, axis=axis, initial=0.0)


@dataclass(eq=False)
class ConnectingMatrix:
    """Discrete connecting operator over basis indices.

    The matrix approximates <W phi_n, W phi_m> and is symmetric up to
    discretization error; sym_defect records (not enforces) the relative
    Frobenius asymmetry.  mask describes the retained index set for masked
    restrictions (None for the full operator).
    """

    matrix: np.ndarray
    provenance: str = ""
    sym_defect: float = float("nan")
    mask: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def masked(self, mask: np.ndarray) -> "ConnectingMatrix":
        """Restriction P K P: rows and columns outside the mask zeroed."""
        mask = np.asarray(mask)
        if mask.dtype == bool:
            keep = mask
        else:
            keep = np.zeros(self.size, dtype=bool)
            keep[mask] = True
        M = np.zeros_like(self.matrix)
        idx = np.nonzero(keep)[0]
        M[np.ix_(idx, idx)] = self.matrix[np.ix_(idx, idx)]
        return ConnectingMatrix(matrix=M, provenance=self.provenance,
                                sym_defect=self.sym_defect, mask=keep)


class TraceProjector:
    """Shared quadrature machinery for projecting traces onto the basis.

    Restricts a trace (receiver lattice, [0, 2T]) to [0, T] x Gamma, applies
    a time-axis operator, and forms inner products against every basis
    function using trapezoid weights on the receiver lattice.
    """

    def __init__(self, spec: BasisSpec, receivers):
        self.spec = spec
        rec_xs = receivers.xs
        rec_ts = receivers.ts
        dt_r, dx_r = receivers.dt_r, receivers.dx_r
        if abs(dt_r - spec.dt_q) > 1e-12 or abs(dx_r - spec.dx_q) > 1e-12:
            raise ConfigurationError(
                "basis quadrature lattice must match the receiver lattice")
        n2t = rec_ts.size
        self.n_t_lat = (n2t - 1) // 2 + 1
        t_lat = rec_ts[:self.n_t_lat]
        if abs(t_lat[-1] - spec.T) > 1e-9:
            raise ConfigurationError("receiver window must cover [0, 2T]")
        # Gamma is a sub-lattice of the receiver positions
        gcols = np.nonzero((rec_xs >= -spec.gamma_half - 1e-9)
                           & (rec_xs <= spec.gamma_half + 1e-9))[0]
        x_gam = rec_xs[gcols]
        if x_gam.size != spec.x_lattice().size or abs(x_gam[0] + spec.gamma_half) > 1e-9:
            raise ConfigurationError("Gamma does not align with the receiver lattice")
        self.gamma_cols = gcols
        wt = trapezoid_weights(self.n_t_lat, dt_r)
        wx = trapezoid_weights(x_gam.size, dx_r)
        self.Btw = (wt[:, None] * spec.time_profiles(t_lat))    # (nT, n_t)
        self.Bxw = (wx[:, None] * spec.space_profiles(x_gam))   # (nG, n_x)
        self.J = j_matrix(n2t, dt_r)
        # precomposed time-axis projections keep the per-trace work at one
        # (n_t x n_2t) by (n_2t x nG) product
        self.PJ = self.Btw.T @ self.J                           # (n_t, n2t)
        self.t_lat = t_lat
        self.x_gam = x_gam

    def project(self, block: np.ndarray) -> np.ndarray:
        """Inner products of a [0,T] x Gamma block against all basis functions."""
        return (self.Btw.T @ block @ self.Bxw).reshape(-1)

    def jl_column(self, trace: np.ndarray) -> np.ndarray:
        """<J (Lambda phi_n), phi_m> for one source's full-window trace."""
        return ((self.PJ @ trace[:, self.gamma_cols]) @ self.Bxw).reshape(-1)

    def rl_column(self, trace: np.ndarray) -> np.ndarray:
        """<R (Lambda^T phi_n), phi_m>: time-truncate, reverse, project."""
        block = trace[:self.n_t_lat, self.gamma_cols][::-1]
        return self.project(block)


def assemble_K(traces: TraceSet, spec: BasisSpec, G: GramMatrix,
               provenance: str | None = None,
               correction: str = "reciprocity") -> ConnectingMatrix:
    """Assemble [K] from boundary traces alone.

    The operator identity reads K = J L2T Theta - R LT R J Theta (with the
    half-cone Duhamel kernel, i.e. an overall factor 1/2 relative to the
    plain integral J exposed by this module).  Two discretizations of the
    correction term are available:

    reciprocity (default)
        Uses (LT)* = R LT R to rewrite <R LT R J Theta phi_n, phi_m> as
        <LT phi_m, J Theta phi_n>, pairing the measured trace of phi_m with
        a closed-form integrated source profile.  No basis expansion enters,
        so small bases carry no span-representation error.

    expansion
        The Galerkin form [R LT] G^{-1} [RJ]: the integrated source J Theta
        phi_n is re-expanded in the basis before the map is applied.  The
        separable [RJ] collapses G^{-1}[RJ] to a time-axis contraction.
        Faithful to the reference discretization, but a basis whose time
        rows do not cover all of (0, T) cannot represent the step-shaped
        profiles and the correction degrades.
    """
    if traces.n_sources != spec.size:
        raise ConfigurationError(
            f"trace set has {traces.n_sources} sources, basis has {spec.size}")
    proj = TraceProjector(spec, traces.receivers)
    n = spec.size
    JL = np.empty((n, n))
    correction_term = np.empty((n, n))

    if correction == "reciprocity":
        # time profiles int_t^T g_k, sampled by reversing the closed-form
        # tail integrals int_{T-t}^T g_k on the uniform [0, T] lattice
        jtheta = spec.time_tail_integrals(proj.t_lat)[::-1, :]
        wt = trapezoid_weights(proj.t_lat.size, traces.receivers.dt_r)
        Jt_w = wt[:, None] * jtheta                       # (nT, n_t)
        for p, tr in traces.traces():
            JL[:, p] = proj.jl_column(tr)
            blk = tr[:proj.n_t_lat, proj.gamma_cols]
            correction_term[p, :] = (Jt_w.T @ blk @ proj.Bxw).reshape(-1)
    elif correction == "expansion":
        RL = np.empty((n, n))
        for p, tr in traces.traces():
            JL[:, p] = proj.jl_column(tr)
            RL[:, p] = proj.rl_column(tr)
        tails = spec.time_tail_integrals(proj.t_lat)      # (nT, n_t)
        time_rj = proj.Btw.T @ tails                      # (n_t, n_t)
        ct_fac, _ = G._factors()
        from scipy.linalg import cho_solve
        Ft = cho_solve(ct_fac, time_rj)                   # gt^{-1} TimeRJ
        RLr = RL.reshape(n, spec.n_t, spec.n_x)
        correction_term = np.einsum("mpl,pk->mkl", RLr, Ft).reshape(n, n)
    else:
        raise ConfigurationError(f"unknown correction mode: {correction}")

    K = 0.5 * (JL - correction_term)
    denom = np.linalg.norm(K)
    defect = np.linalg.norm(K - K.T) / denom if denom > 0 else 0.0
    return ConnectingMatrix(matrix=K,
                            provenance=provenance or getattr(traces, "provenance", ""),
                            sym_defect=float(defect))
