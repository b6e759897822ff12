"""Ground-truth geometry for a half-space acoustic medium.

A wave speed c(x, z) on the half-space z <= 0 induces the conformal metric
g = c^-2 (dx^2 + dz^2).  This module holds sampled speed fields, travel-time
(eikonal) distance fields, normal geodesics launched from the surface, and
the semi-geodesic reference coordinates built from them.  Everything here is
synthesis-side ground truth: it is used to generate data and to provide
independent oracles, never by the inversion itself.
"""

from __future__ import annotations

import heapq
import io
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigurationError, DomainError

__all__ = [
    "SpeedField",
    "DistanceField",
    "GeodesicPath",
    "constant_speed",
    "layered_speed",
    "lens_speed",
    "resample_field",
    "eval_speed",
    "eikonal_distance",
    "trace_geodesic",
    "cut_length",
    "surface_distance_table",
    "semi_geodesic_grid",
    "save_speed_field",
    "load_speed_field",
    "speed_field_to_csv",
]


# ---------------------------------------------------------------------------
# Grids and fields
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SpeedField:
    """Sampled wave speed on a rectangular grid in the half-space z <= 0.

    values[ix, iz] is the speed at (origin[0] + ix*spacing[0],
    origin[1] + iz*spacing[1]); the last z-index lies on the surface z = 0.
    Treated as immutable after construction; derived arrays are cached.
    """

    origin: tuple[float, float]
    spacing: tuple[float, float]
    values: np.ndarray
    _log_grad: tuple[np.ndarray, np.ndarray] | None = dc_field(
        default=None, repr=False, compare=False)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ConfigurationError("speed values must be a 2D array")
        if not np.all(self.values > 0.0):
            raise ConfigurationError("wave speed must be strictly positive")
        if self.spacing[0] <= 0 or self.spacing[1] <= 0:
            raise ConfigurationError("grid spacing must be positive")
        z_top = self.origin[1] + (self.values.shape[1] - 1) * self.spacing[1]
        if abs(z_top) > 1e-9 * max(1.0, self.spacing[1]):
            raise ConfigurationError(
                f"top grid row must lie on the surface z = 0, got z = {z_top}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def xs(self) -> np.ndarray:
        return self.origin[0] + self.spacing[0] * np.arange(self.shape[0])

    @property
    def zs(self) -> np.ndarray:
        return self.origin[1] + self.spacing[1] * np.arange(self.shape[1])

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(x_min, x_max, z_min, z_max) of the stored grid."""
        return (self.origin[0], self.origin[0] + self.spacing[0] * (self.shape[0] - 1),
                self.origin[1], self.origin[1] + self.spacing[1] * (self.shape[1] - 1))

    @property
    def max_speed(self) -> float:
        return float(self.values.max())

    def log_gradient(self) -> tuple[np.ndarray, np.ndarray]:
        """Centered finite differences of log c (one-sided at edges)."""
        if self._log_grad is None:
            logc = np.log(self.values)
            gx = np.gradient(logc, self.spacing[0], axis=0)
            gz = np.gradient(logc, self.spacing[1], axis=1)
            self._log_grad = (gx, gz)
        return self._log_grad


@dataclass(eq=False)
class DistanceField:
    """Travel-time distance d(., S) in the metric c^-2 dx^2, on the same grid
    layout as the speed field it was computed from."""

    origin: tuple[float, float]
    spacing: tuple[float, float]
    values: np.ndarray

    @property
    def xs(self) -> np.ndarray:
        return self.origin[0] + self.spacing[0] * np.arange(self.values.shape[0])

    @property
    def zs(self) -> np.ndarray:
        return self.origin[1] + self.spacing[1] * np.arange(self.values.shape[1])

    def __call__(self, p) -> float:
        return float(_bilinear(self.values, self.origin, self.spacing, p, clamp=True))

    def surface_values(self) -> np.ndarray:
        """Distances along the top row z = 0."""
        return self.values[:, -1].copy()


@dataclass(eq=False)
class GeodesicPath:
    """Unit-speed normal geodesic of g = c^-2 dx^2 from a surface point.

    points[k] is the Cartesian position at arclength s[k]; the launch
    direction is the inward normal (0, -1) scaled to g-unit speed.
    """

    y: float
    s: np.ndarray
    points: np.ndarray        # shape (n, 2)
    velocities: np.ndarray    # Cartesian velocities, shape (n, 2)
    truncated: bool           # True if the path left the grid before s_max
    cut: float | None = None  # cut length, once measured

    def position(self, s: float) -> np.ndarray:
        """Linear interpolation of the path at arclength s."""
        return np.array([np.interp(s, self.s, self.points[:, 0]),
                         np.interp(s, self.s, self.points[:, 1])])


# ---------------------------------------------------------------------------
# Model constructors
# ---------------------------------------------------------------------------

def _grid(x_half: float, depth: float, dx: float):
    """Symmetric grid snapped so the surface z = 0 is exactly a grid row."""
    nh = int(math.ceil(x_half / dx - 1e-9))
    nz = int(math.ceil(depth / dx - 1e-9)) + 1
    xs = dx * np.arange(-nh, nh + 1)
    zs = dx * np.arange(-(nz - 1), 1)
    return xs, zs


def constant_speed(c: float, x_half: float, depth: float, dx: float) -> SpeedField:
    xs, zs = _grid(x_half, depth, dx)
    vals = np.full((xs.size, zs.size), float(c))
    return SpeedField((xs[0], zs[0]), (dx, dx), vals)


def layered_speed(c0: float, gradient: float, x_half: float, depth: float,
                  dx: float, floor: float = 0.1) -> SpeedField:
    """Speed varying linearly with depth, c(z) = c0 + gradient*z, clipped below."""
    xs, zs = _grid(x_half, depth, dx)
    prof = np.maximum(c0 + gradient * zs, floor)
    vals = np.tile(prof, (xs.size, 1))
    return SpeedField((xs[0], zs[0]), (dx, dx), vals)


def lens_speed(x_half: float, depth: float, dx: float, floor: float = 0.1) -> SpeedField:
    """Depth gradient plus a slow Gaussian lens anomaly near the surface."""
    xs, zs = _grid(x_half, depth, dx)
    x, z = np.meshgrid(xs, zs, indexing="ij")
    vals = lens_speed_formula(x, z)
    return SpeedField((xs[0], zs[0]), (dx, dx), np.maximum(vals, floor))


def lens_speed_formula(x, z):
    """c = 1 + z/2 - exp(-4(x^2 + (z - 0.375)^2))/2, valid for shallow z."""
    return 1.0 + 0.5 * z - 0.5 * np.exp(-4.0 * (x ** 2 + (z - 0.375) ** 2))


def resample_field(field: SpeedField, dx: float, x_half: float | None = None,
                   depth: float | None = None) -> SpeedField:
    """Bilinear resampling onto a square grid with spacing dx.

    Queries outside the stored extent use constant continuation of the
    nearest stored value, so a resampled field may be wider than its source.
    """
    x0, x1, z0, _ = field.extent
    if x_half is None:
        x_half = min(-x0, x1)
    if depth is None:
        depth = -z0
    xs, zs = _grid(x_half, depth, dx)
    pts_x, pts_z = np.meshgrid(xs, zs, indexing="ij")
    vals = _bilinear(field.values, field.origin, field.spacing,
                     np.stack([pts_x.ravel(), pts_z.ravel()], axis=1), clamp=True)
    return SpeedField((xs[0], zs[0]), (dx, dx), vals.reshape(xs.size, zs.size))


# ---------------------------------------------------------------------------
# Interpolation
# ---------------------------------------------------------------------------

def _bilinear(values: np.ndarray, origin, spacing, p, clamp: bool):
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    pts = p.reshape(1, 2) if single else p
    fx = (pts[:, 0] - origin[0]) / spacing[0]
    fz = (pts[:, 1] - origin[1]) / spacing[1]
    nx, nz = values.shape
    if clamp:
        fx = np.clip(fx, 0.0, nx - 1.0)
        fz = np.clip(fz, 0.0, nz - 1.0)
    else:
        eps = 1e-9
        if np.any(fx < -eps) or np.any(fx > nx - 1 + eps) \
                or np.any(fz < -eps) or np.any(fz > nz - 1 + eps):
            raise DomainError("query point outside the stored grid extent")
        fx = np.clip(fx, 0.0, nx - 1.0)
        fz = np.clip(fz, 0.0, nz - 1.0)
    ix = np.minimum(fx.astype(np.intp), nx - 2)
    iz = np.minimum(fz.astype(np.intp), nz - 2)
    tx = fx - ix
    tz = fz - iz
    v = (values[ix, iz] * (1 - tx) * (1 - tz)
         + values[ix + 1, iz] * tx * (1 - tz)
         + values[ix, iz + 1] * (1 - tx) * tz
         + values[ix + 1, iz + 1] * tx * tz)
    return v[0] if single else v


def eval_speed(field: SpeedField, p) -> float:
    """Bilinear interpolation of c at point(s) p; exact at grid nodes.

    Raises DomainError for points outside the stored extent.
    """
    return _bilinear(field.values, field.origin, field.spacing, p, clamp=False)


def eval_speed_clamped(field: SpeedField, p):
    """Like eval_speed but with constant continuation outside the grid,
    for stencil safety in integrators."""
    return _bilinear(field.values, field.origin, field.spacing, p, clamp=True)


# ---------------------------------------------------------------------------
# Eikonal solvers
# ---------------------------------------------------------------------------

def _source_nodes(field: SpeedField, source):
    """Normalize a source spec into (node index array, seed distances)."""
    kind, payload = source
    nx, nz = field.shape
    if kind == "point":
        x, z = payload
        ix = int(round((x - field.origin[0]) / field.spacing[0]))
        iz = int(round((z - field.origin[1]) / field.spacing[1]))
        if not (0 <= ix < nx and 0 <= iz < nz):
            raise DomainError("eikonal source point outside grid")
        seeds = []
        s_src = 1.0 / field.values[ix, iz]
        # 8-neighbor initialization: exact Euclidean distance scaled by the
        # average slowness over the step.
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                i, j = ix + di, iz + dj
                if 0 <= i < nx and 0 <= j < nz:
                    r = math.hypot(di * field.spacing[0], dj * field.spacing[1])
                    s_avg = 0.5 * (s_src + 1.0 / field.values[i, j])
                    seeds.append((i, j, r * s_avg))
        return seeds
    if kind == "surface":
        x_lo, x_hi = payload
        i_lo = int(np.ceil((x_lo - field.origin[0]) / field.spacing[0] - 1e-9))
        i_hi = int(np.floor((x_hi - field.origin[0]) / field.spacing[0] + 1e-9))
        i_lo = max(i_lo, 0)
        i_hi = min(i_hi, nx - 1)
        if i_hi < i_lo:
            raise DomainError("surface source segment misses the grid")
        return [(i, nz - 1, 0.0) for i in range(i_lo, i_hi + 1)]
    raise ConfigurationError(f"unknown eikonal source kind: {kind}")


def _upwind_value(a: float, b: float, ha: float, hb: float, slow: float) -> float:
    """Godunov first-order update from the best x-neighbor a (spacing ha)
    and z-neighbor b (spacing hb)."""
    if a > b:
        a, b, ha, hb = b, a, hb, ha
    # try one-sided first
    u = a + ha * slow
    if u <= b:
        return u
    # two-sided quadratic: ((u-a)/ha)^2 + ((u-b)/hb)^2 = slow^2
    ia, ib = 1.0 / (ha * ha), 1.0 / (hb * hb)
    A = ia + ib
    B = -2.0 * (a * ia + b * ib)
    C = a * a * ia + b * b * ib - slow * slow
    disc = B * B - 4 * A * C
    if disc <= 0.0:
        return u
    return (-B + math.sqrt(disc)) / (2 * A)


def _fmm(field: SpeedField, seeds) -> np.ndarray:
    """Heap-based first-order fast marching."""
    nx, nz = field.shape
    ha, hb = field.spacing
    slowness = 1.0 / field.values
    INF = np.inf
    d = np.full((nx, nz), INF)
    accepted = np.zeros((nx, nz), dtype=bool)
    heap = []
    for i, j, v in seeds:
        if v < d[i, j]:
            d[i, j] = v
            heapq.heappush(heap, (v, i, j))
    while heap:
        v, i, j = heapq.heappop(heap)
        if accepted[i, j] or v > d[i, j]:
            continue
        accepted[i, j] = True
        for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            ii, jj = i + di, j + dj
            if not (0 <= ii < nx and 0 <= jj < nz) or accepted[ii, jj]:
                continue
            a = min(d[ii - 1, jj] if ii > 0 else INF,
                    d[ii + 1, jj] if ii < nx - 1 else INF)
            b = min(d[ii, jj - 1] if jj > 0 else INF,
                    d[ii, jj + 1] if jj < nz - 1 else INF)
            if a == INF and b == INF:
                continue
            if b == INF:
                u = a + ha * slowness[ii, jj]
            elif a == INF:
                u = b + hb * slowness[ii, jj]
            else:
                u = _upwind_value(a, b, ha, hb, slowness[ii, jj])
            if u < d[ii, jj]:
                d[ii, jj] = u
                heapq.heappush(heap, (u, ii, jj))
    return d


def _fsm(field: SpeedField, seeds, max_iter: int = 50, tol: float = 1e-12) -> np.ndarray:
    """Vectorized fast sweeping for the same first-order upwind system.

    Sweeps anti-diagonals in four orderings; every node on a diagonal only
    reads neighbors on adjacent diagonals, so each diagonal updates as one
    vector operation.  Converges to the fast-marching solution.
    """
    nx, nz = field.shape
    ha, hb = field.spacing
    f = (1.0 / field.values)          # slowness
    INF = 1e30
    d = np.full((nx, nz), INF)
    for i, j, v in seeds:
        d[i, j] = min(d[i, j], v)

    ii = np.arange(nx)
    diag_orders = []
    for x_rev in (False, True):
        for z_rev in (False, True):
            diag_orders.append((x_rev, z_rev))

    def sweep(x_rev: bool, z_rev: bool) -> float:
        change = 0.0
        # iterate diagonals k = ix' + iz' where primed indices follow the
        # sweep direction
        for k in range(nx + nz - 1):
            i0 = max(0, k - nz + 1)
            i1 = min(nx - 1, k)
            idx = ii[i0:i1 + 1]
            ix = (nx - 1 - idx) if x_rev else idx
            jz = k - idx
            jz = (nz - 1 - jz) if z_rev else jz
            a = np.minimum(
                np.where(ix > 0, d[np.maximum(ix - 1, 0), jz], INF),
                np.where(ix < nx - 1, d[np.minimum(ix + 1, nx - 1), jz], INF))
            b = np.minimum(
                np.where(jz > 0, d[ix, np.maximum(jz - 1, 0)], INF),
                np.where(jz < nz - 1, d[ix, np.minimum(jz + 1, nz - 1)], INF))
            slow = f[ix, jz]
            lo = np.minimum(a, b)
            hi = np.maximum(a, b)
            hlo = np.where(a <= b, ha, hb)
            hhi = np.where(a <= b, hb, ha)
            u1 = lo + hlo * slow
            # two-sided quadratic (valid when u exceeds the larger neighbor)
            iA = 1.0 / (ha * ha) + 1.0 / (hb * hb)
            Bq = -2.0 * (a / (ha * ha) + b / (hb * hb))
            Cq = a * a / (ha * ha) + b * b / (hb * hb) - slow * slow
            disc = Bq * Bq - 4 * iA * Cq
            with np.errstate(invalid="ignore"):
                u2 = (-Bq + np.sqrt(np.maximum(disc, 0.0))) / (2 * iA)
            u = np.where((u1 <= hi) | (disc <= 0) | (hi >= INF), u1, u2)
            u = np.minimum(d[ix, jz], u)
            change = max(change, float(np.max(d[ix, jz] - u, initial=0.0)))
            d[ix, jz] = u
        return change

    for _ in range(max_iter):
        total = 0.0
        for x_rev, z_rev in diag_orders:
            total = max(total, sweep(x_rev, z_rev))
        if total < tol:
            break
    return d


def eikonal_distance(field: SpeedField, source, method: str = "marching") -> DistanceField:
    """First-order upwind travel-time distance from a source.

    source is ("point", (x, z)) or ("surface", (x_lo, x_hi)).  "marching"
    is the heap-based fast-marching solver; "sweeping" solves the identical
    upwind system by vectorized sweeps (faster on large grids).
    """
    seeds = _source_nodes(field, source)
    if method == "marching":
        d = _fmm(field, seeds)
    elif method == "sweeping":
        d = _fsm(field, seeds)
    else:
        raise ConfigurationError(f"unknown eikonal method: {method}")
    return DistanceField(field.origin, field.spacing, d)


def surface_distance_table(field: SpeedField, y: float,
                           xs: np.ndarray | None = None,
                           strip_depth: float | None = None,
                           dx: float | None = None,
                           method: str = "sweeping") -> tuple[np.ndarray, np.ndarray]:
    """Distances d(x, y) between surface points, from an eikonal solve.

    The solve runs on a strip of the medium below the surface (geodesics
    between nearby surface points stay shallow); strip_depth and dx control
    its extent and resolution.  Returns (xs, distances at those xs).
    """
    x0, x1, z0, _ = field.extent
    if strip_depth is None:
        strip_depth = min(-z0, 0.6 * (x1 - x0) / 2)
    if dx is None:
        dx = field.spacing[0]
    strip = resample_field(field, dx, x_half=(x1 - x0) / 2, depth=strip_depth)
    dist = eikonal_distance(strip, ("point", (y, 0.0)), method=method)
    surf = dist.surface_values()
    grid_xs = dist.xs
    if xs is None:
        return grid_xs, surf
    return np.asarray(xs, float), np.interp(xs, grid_xs, surf)


# ---------------------------------------------------------------------------
# Geodesics
# ---------------------------------------------------------------------------

def _geodesic_rhs(field: SpeedField, state: np.ndarray) -> np.ndarray:
    """RHS of the geodesic ODE for g = c^-2 dx^2 in Cartesian coordinates.

    With L = log c the Christoffel terms reduce to
      x'' =  dL/dx (x'^2 - z'^2) + 2 dL/dz x' z'
      z'' =  dL/dz (z'^2 - x'^2) + 2 dL/dx x' z'
    """
    gx, gz = field.log_gradient()
    p = state[:2]
    v = state[2:]
    lx = _bilinear(gx, field.origin, field.spacing, p, clamp=True)
    lz = _bilinear(gz, field.origin, field.spacing, p, clamp=True)
    ax = lx * (v[0] ** 2 - v[1] ** 2) + 2.0 * lz * v[0] * v[1]
    az = lz * (v[1] ** 2 - v[0] ** 2) + 2.0 * lx * v[0] * v[1]
    return np.array([v[0], v[1], ax, az])


def trace_geodesic(field: SpeedField, y: float, s_max: float, ds: float) -> GeodesicPath:
    """Integrate the inward normal geodesic from (y, 0) by classical RK4.

    The initial Cartesian velocity is c(y, 0) * (0, -1) so the path is
    unit-speed in g.  Integration stops at s_max or on domain exit (the
    returned path is then flagged truncated).
    """
    if ds <= 0:
        raise ConfigurationError("geodesic step must be positive")
    x0, x1, z0, z1 = field.extent
    c0 = eval_speed(field, (y, 0.0))
    state = np.array([y, 0.0, 0.0, -c0])
    n_steps = int(round(s_max / ds))
    pts = [state[:2].copy()]
    vels = [state[2:].copy()]
    ss = [0.0]
    truncated = False
    for k in range(n_steps):
        k1 = _geodesic_rhs(field, state)
        k2 = _geodesic_rhs(field, state + 0.5 * ds * k1)
        k3 = _geodesic_rhs(field, state + 0.5 * ds * k2)
        k4 = _geodesic_rhs(field, state + ds * k3)
        state = state + (ds / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not (x0 <= state[0] <= x1 and z0 <= state[1] <= z1):
            truncated = True
            break
        pts.append(state[:2].copy())
        vels.append(state[2:].copy())
        ss.append((k + 1) * ds)
    return GeodesicPath(y=y, s=np.array(ss), points=np.array(pts),
                        velocities=np.array(vels), truncated=truncated)


def cut_length(field: SpeedField, path: GeodesicPath, dist_from_surface: DistanceField,
               tol: float) -> float:
    """Largest sampled arclength s at which the path still minimizes the
    distance to the surface set, i.e. |d(path(s)) - s| <= tol; returns the
    final sampled s if no violation is detected."""
    d_vals = np.array([dist_from_surface(p) for p in path.points])
    bad = np.nonzero(np.abs(d_vals - path.s) > tol)[0]
    sigma = float(path.s[-1]) if bad.size == 0 else float(path.s[max(bad[0] - 1, 0)])
    path.cut = sigma
    return sigma


def semi_geodesic_grid(field: SpeedField, ys, ss, ds: float | None = None):
    """Reference coordinates Phi_g(y_i, s_j) for a grid of surface points and
    arclengths.  Returns an array of shape (len(ys), len(ss), 2)."""
    ys = np.asarray(ys, float)
    ss = np.asarray(ss, float)
    if ds is None:
        ds = min(field.spacing) / 4
    s_max = float(ss.max())
    out = np.full((ys.size, ss.size, 2), np.nan)
    for i, y in enumerate(ys):
        path = trace_geodesic(field, y, s_max + ds, ds)
        reach = path.s[-1]
        for j, s in enumerate(ss):
            if s <= reach:
                out[i, j] = path.position(s)
    return out


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_MAGIC = "speedfield 1"


def save_speed_field(path, field: SpeedField) -> None:
    """Textual header (origin, spacing, shape) + row-major float64 payload."""
    header = io.StringIO()
    header.write(f"{_MAGIC}\n")
    header.write(f"origin {float(field.origin[0])!r} {float(field.origin[1])!r}\n")
    header.write(f"spacing {float(field.spacing[0])!r} {float(field.spacing[1])!r}\n")
    header.write(f"shape {field.shape[0]} {field.shape[1]}\n")
    header.write("payload float64 row-major little-endian\n\n")
    with open(path, "wb") as fh:
        fh.write(header.getvalue().encode("utf-8"))
        fh.write(field.values.astype("<f8").tobytes(order="C"))


def load_speed_field(path) -> SpeedField:
    with open(path, "rb") as fh:
        raw = fh.read()
    sep = raw.index(b"\n\n")
    lines = raw[:sep].decode("utf-8").splitlines()
    if lines[0] != _MAGIC:
        raise ConfigurationError(f"not a speed-field file: {path}")
    meta = {}
    for line in lines[1:]:
        key, *vals = line.split()
        meta[key] = vals
    origin = (float(meta["origin"][0]), float(meta["origin"][1]))
    spacing = (float(meta["spacing"][0]), float(meta["spacing"][1]))
    nx, nz = int(meta["shape"][0]), int(meta["shape"][1])
    vals = np.frombuffer(raw[sep + 2:], dtype="<f8", count=nx * nz).reshape(nx, nz)
    return SpeedField(origin, spacing, vals.copy())


def speed_field_to_csv(path, field: SpeedField) -> None:
    """Debug export: one x,z,c row per grid node."""
    xs, zs = field.xs, field.zs
    with open(path, "w") as fh:
        fh.write("x,z,c\n")
        for i, x in enumerate(xs):
            for j, z in enumerate(zs):
                fh.write(f"{x:.10g},{z:.10g},{field.values[i, j]:.17g}\n")
