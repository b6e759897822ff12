"""Blind control problems: masks, Tikhonov solves, and wave-cap sources.

A boundary function tau defines the time window S_tau = {(t, x): t >= T -
tau(x)} and, through finite propagation speed, the domain of influence
M(tau) that waves from sources in S_tau can reach by time T.  Masking the
connecting matrix to S_tau and solving the regularized system

    ([K_tau] + alpha) f = [b_tau],      b(t) = T - t,

yields sources whose final-time wavefields approximate the indicator of
M(tau).  Differencing the solutions for two nested tau produces a source
concentrated on a wave cap; its pairing with the masked right-hand side
estimates the cap volume.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh, solve

from .basis import BasisSpec, b_moment_vector
from .boundary_ops import ConnectingMatrix
from .errors import ConfigurationError, NumericalError

__all__ = [
    "TauFunction",
    "BoundaryDistances",
    "CapSpec",
    "CapSource",
    "tau_constant",
    "tau_for_cap",
    "mask_for_tau",
    "solve_control",
    "cap_source",
    "default_alpha",
]


@dataclass(eq=False)
class TauFunction:
    """Piecewise-linear boundary time profile tau: Gamma -> [0, T]."""

    xs: np.ndarray
    values: np.ndarray

    def __call__(self, x):
        return np.interp(x, self.xs, self.values)

    def maximum(self, other: "TauFunction") -> "TauFunction":
        if self.xs.shape != other.xs.shape or not np.allclose(self.xs, other.xs):
            raise ConfigurationError("tau functions sampled on different lattices")
        return TauFunction(self.xs, np.maximum(self.values, other.values))


@dataclass(eq=False)
class BoundaryDistances:
    """Table of boundary travel-time distances d(x, y) for a fixed center y.

    tol records the accuracy of the table (e.g. the eikonal grid error); the
    masking rule treats threshold comparisons within tol as satisfied, which
    keeps masks stable when exact threshold ties are perturbed by solver
    noise."""

    y: float
    xs: np.ndarray
    values: np.ndarray
    tol: float = 0.0

    def __call__(self, x):
        return np.interp(x, self.xs, self.values)


@dataclass(frozen=True)
class CapSpec:
    """Wave cap cap(y, s, h): points at least s from the boundary and at most
    s + h from the center y, carved out by a regularized control pair."""

    y: float
    s: float
    h: float
    alpha: float | None = None


@dataclass(eq=False)
class CapSource:
    """Difference of two control solutions concentrating on a wave cap."""

    cap: CapSpec
    f1: np.ndarray              # control for tau1 = s * 1_Gamma
    f2: np.ndarray              # control for tau2 = tau_y^{s+h} v tau1
    psi: np.ndarray             # f2 - f1
    mask1: np.ndarray
    mask2: np.ndarray
    volume: float               # <psi, [b_tau2]>, the cap-volume scalar
    alpha: float
    diagnostics: dict = dc_field(default_factory=dict)


def tau_constant(xs, s: float) -> TauFunction:
    xs = np.asarray(xs, float)
    return TauFunction(xs, np.full(xs.size, float(s)))


def boundary_distances_from_field(field, y: float, dx: float | None = None,
                                  strip_depth: float | None = None,
                                  method: str = "sweeping") -> BoundaryDistances:
    """Boundary-distance table d(., y) from a ground-truth eikonal solve on a
    shallow strip of the medium (synthesis-side input to the cap geometry)."""
    from .medium import surface_distance_table

    if dx is None:
        dx = field.spacing[0]
    xs, vals = surface_distance_table(field, y, dx=dx, strip_depth=strip_depth,
                                      method=method)
    return BoundaryDistances(y=y, xs=xs, values=vals, tol=3.0 * dx)


def tau_for_cap(y: float, s: float, h: float, bdist: BoundaryDistances,
                T: float) -> tuple[TauFunction, TauFunction]:
    """The nested pair tau1 = s, tau2 = max(s + h - d(., y), s)."""
    if s <= 0 or h < 0:
        raise ConfigurationError("cap requires s > 0 and h >= 0")
    if s + h > T:
        raise ConfigurationError(
            f"cap depth s+h = {s + h} exceeds the source window T = {T}")
    tau1 = tau_constant(bdist.xs, s)
    tau2 = TauFunction(bdist.xs, np.maximum(s + h - bdist.values, s))
    return tau1, tau2


def mask_for_tau(tau: TauFunction, spec: BasisSpec, tol: float = 1e-12) -> np.ndarray:
    """Center-based masking: basis index (i, j) is retained iff the source
    center obeys T - t_i <= tau(x_j) within tol.  Returns a boolean array
    over the flat basis index."""
    lhs = spec.T - spec.t_centers                     # (n_t,)
    rhs = tau(spec.x_centers)                         # (n_x,)
    keep = lhs[:, None] <= rhs[None, :] + max(tol, 1e-12)
    return keep.reshape(-1)


def default_alpha(K: ConnectingMatrix) -> float:
    """Scale-aware regularization default, 1e-4 * trace([K]) / N."""
    return 1e-4 * float(np.trace(K.matrix)) / K.size


def _masked_system(K: ConnectingMatrix, bvec: np.ndarray, mask: np.ndarray):
    mask = np.asarray(mask)
    if mask.dtype != bool:
        b = np.zeros(K.size, dtype=bool)
        b[mask] = True
        mask = b
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        raise ConfigurationError("control mask is empty")
    A = K.matrix[np.ix_(idx, idx)]
    A = 0.5 * (A + A.T)
    return idx, A, bvec[idx]


def solve_control(K: ConnectingMatrix, bvec: np.ndarray, mask: np.ndarray,
                  alpha: float) -> np.ndarray:
    """Solve ([K_tau] + alpha) f = [b_tau] on the masked index set.

    Entries outside the mask are zero in the returned coefficient vector.
    The masked block is symmetrized and factored directly; if the shifted
    system is not positive definite an LDL-type symmetric solve is used.
    """
    if alpha <= 0:
        raise ConfigurationError("regularization alpha must be positive")
    idx, A, rhs = _masked_system(K, bvec, mask)
    A = A + alpha * np.eye(idx.size)
    try:
        sol = cho_solve(cho_factor(A), rhs)
    except np.linalg.LinAlgError:
        try:
            sol = solve(A, rhs, assume_a="sym")
        except np.linalg.LinAlgError as exc:
            cond = np.linalg.cond(A)
            raise NumericalError(
                f"control solve failed at alpha={alpha:.3e}; cond={cond:.3e}") from exc
    out = np.zeros(K.size)
    out[idx] = sol
    return out


class _MaskedEig:
    """Eigendecomposition of a masked block, reused across an alpha sweep."""

    def __init__(self, K: ConnectingMatrix, bvec: np.ndarray, mask: np.ndarray):
        self.idx, A, self.rhs = _masked_system(K, bvec, mask)
        self.w, self.V = eigh(A)
        self.vr = self.V.T @ self.rhs
        self.size = K.size

    def solve(self, alpha: float) -> np.ndarray:
        out = np.zeros(self.size)
        out[self.idx] = self.V @ (self.vr / (self.w + alpha))
        return out


def cap_source(K: ConnectingMatrix, spec: BasisSpec, cap: CapSpec,
               bdist: BoundaryDistances, bvec: np.ndarray | None = None,
               alphas=None) -> CapSource:
    """Construct the wave-cap source for one cap.

    Runs tau_for_cap, solves the two masked control problems, and forms
    psi = f2 - f1 together with the volume scalar <psi, [b_tau2]>.  With a
    sequence of alphas, every solve reuses one eigendecomposition per mask
    and the last alpha's solution is returned, with the volume sweep kept in
    the diagnostics.
    """
    if bvec is None:
        bvec = b_moment_vector(spec)
    tau1, tau2 = tau_for_cap(cap.y, cap.s, cap.h, bdist, spec.T)
    mask1 = mask_for_tau(tau1, spec, tol=bdist.tol)
    mask2 = mask_for_tau(tau2, spec, tol=bdist.tol)
    alpha = cap.alpha if cap.alpha is not None else default_alpha(K)
    diagnostics = {"mask1_size": int(mask1.sum()), "mask2_size": int(mask2.sum())}

    b1 = np.where(mask1, bvec, 0.0)
    b2 = np.where(mask2, bvec, 0.0)
    if alphas is not None:
        alphas = np.asarray(alphas, float)
        e1 = _MaskedEig(K, bvec, mask1)
        e2 = _MaskedEig(K, bvec, mask2)
        volumes = []
        for al in alphas:
            p = e2.solve(al) - e1.solve(al)
            volumes.append(float(p @ b2))
        alpha = float(alphas[-1])
        f1 = e1.solve(alpha)
        f2 = e2.solve(alpha)
        diagnostics["alpha_sweep"] = alphas
        diagnostics["volume_sweep"] = np.array(volumes)
    else:
        f1 = solve_control(K, bvec, mask1, alpha)
        f2 = solve_control(K, bvec, mask2, alpha)
    psi = f2 - f1
    volume = float(psi @ b2)
    return CapSource(cap=cap, f1=f1, f2=f2, psi=psi, mask1=mask1, mask2=mask2,
                     volume=volume, alpha=alpha, diagnostics=diagnostics)
