"""Pipeline configuration: one structured-text (TOML) file with keys named
after the experiment's scalar parameters.

Cross-field constraints are validated up front: the receiver lattice must
subdivide the source lattice, Gamma must sit inside the receiver span with
the wave-travel margin, the cap height must be an integral multiple of the
source time spacing, and the reconstruction grid must stay inside the
source grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, asdict

import numpy as np

from .errors import ConfigurationError

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml

__all__ = [
    "MediumSpec",
    "ReconSpec",
    "SolverSpec",
    "PipelineConfig",
    "load_config",
    "save_config",
    "desk_constant_profile",
    "desk_lens_profile",
    "full_lens_profile",
]


@dataclass
class MediumSpec:
    kind: str = "constant"          # constant | layered | lens | file
    c: float = 1.0                  # constant value
    c0: float = 1.0                 # layered: surface speed
    gradient: float = 0.0           # layered: d c / d z
    floor: float = 0.1              # positivity clamp for model formulas
    path: str = ""                  # file kind: speed-field file


@dataclass
class ReconSpec:
    y_min: float = -0.75
    y_max: float = 0.75
    y_step: float = 0.05
    s_min: float = 0.05
    s_max: float = 0.65
    s_step: float = 0.05
    h: float = 0.1
    alpha: float | None = None      # absolute regularization; None = scaled
    alpha_scale: float = 1e-2       # alpha = alpha_scale * trace([K]) / N
    spline_lam: float | None = None  # smoothing penalty; None = GCV

    def ys(self) -> np.ndarray:
        n = int(round((self.y_max - self.y_min) / self.y_step)) + 1
        return self.y_min + self.y_step * np.arange(n)

    def ss(self) -> np.ndarray:
        n = int(round((self.s_max - self.s_min) / self.s_step)) + 1
        return self.s_min + self.s_step * np.arange(n)


@dataclass
class SolverSpec:
    dx: float = 0.0125
    cfl: float = 0.5
    depth: float | None = None      # None: sized from the travel budget
    pad: float = 0.2                # extra width beyond the reflection bound
    bdist_dx: float | None = None   # eikonal strip resolution
    bdist_depth: float | None = None
    correction: str = "reciprocity"  # connecting-operator correction term


@dataclass
class PipelineConfig:
    """All scalars of one experiment; field names follow the usual symbols:
    T source window, t0 ramp-up buffer, ls/lr source/receiver half-spans,
    dts/dxs source lattice, a Gaussian width, dxr/dtr receiver lattice."""

    T: float = 1.0
    t0: float = 0.1
    ls: float = 1.5
    lr: float = 2.9
    dts: float = 0.05
    dxs: float = 0.05
    a: float = 345.4
    dxr: float = 0.025
    dtr: float = 0.005
    gamma_margin: float | None = None   # None: four Gaussian widths
    t_first: float | None = None        # first source time; None: dts
    medium: MediumSpec = dc_field(default_factory=MediumSpec)
    recon: ReconSpec = dc_field(default_factory=ReconSpec)
    solver: SolverSpec = dc_field(default_factory=SolverSpec)
    threads: int = 1
    label: str = "bcwave"

    # --- derived quantities -------------------------------------------------
    def t_centers(self) -> np.ndarray:
        first = self.t_first if self.t_first is not None else self.dts
        n = int(math.floor((self.T - first) / self.dts + 1e-9))
        ts = first + self.dts * np.arange(n + 1)
        return ts[ts < self.T - 1e-12]

    def x_centers(self) -> np.ndarray:
        n = int(round(2 * self.ls / self.dxs))
        return -self.ls + self.dxs * np.arange(n + 1)

    def margin(self) -> float:
        if self.gamma_margin is not None:
            return self.gamma_margin
        return 4.0 / math.sqrt(self.a)

    def validate(self) -> None:
        def integral(num, den, what):
            r = num / den
            if abs(r - round(r)) > 1e-9:
                raise ConfigurationError(f"{what}: {num} is not a multiple of {den}")

        if self.ls > self.lr:
            raise ConfigurationError("source span ls exceeds receiver span lr")
        integral(self.h_effective(), self.dts, "cap height h vs source spacing dts")
        integral(self.dxs, self.dxr, "source spacing dxs vs receiver spacing dxr")
        integral(self.dts, self.dtr, "source spacing dts vs receiver spacing dtr")
        integral(self.T, self.dtr, "window T vs receiver sampling dtr")
        integral(self.t0, self.dtr, "buffer t0 vs receiver sampling dtr")
        integral(self.ls, self.dxr, "span ls vs receiver spacing dxr")
        integral(self.lr, self.dxr, "span lr vs receiver spacing dxr")
        integral(self.dxr, self.solver.dx, "receiver spacing dxr vs solver dx")
        rc = self.recon
        if rc.y_min < -self.ls - 1e-9 or rc.y_max > self.ls + 1e-9:
            raise ConfigurationError("reconstruction grid exceeds the source span")
        if rc.s_max + rc.h > self.T + 1e-9:
            raise ConfigurationError("reconstruction depth s_max + h exceeds T")
        if self.solver.cfl > 0.5 + 1e-12:
            raise ConfigurationError("CFL limit is 0.5 for the 5-point stencil")
        gamma = self.ls + math.ceil(self.margin() / self.dxr) * self.dxr
        if gamma + self.T * 1.0 > self.lr + 1e-9:
            # the data condition d(x, Gamma) <= T within the receiver span is
            # checked against the nominal unit surface speed; media with
            # faster boundaries need a larger lr set explicitly
            if self.lr < gamma:
                raise ConfigurationError("Gamma (with margin) exceeds lr")

    def h_effective(self) -> float:
        return self.recon.h

    # --- serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        # drop Nones (TOML has no null); loaders restore defaults
        def clean(obj):
            if isinstance(obj, dict):
                return {k: clean(v) for k, v in obj.items() if v is not None}
            return obj
        return clean(d)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        med = MediumSpec(**d.pop("medium", {}))
        rec = ReconSpec(**d.pop("recon", {}))
        sol = SolverSpec(**d.pop("solver", {}))
        cfg = cls(medium=med, recon=rec, solver=sol, **d)
        return cfg


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigurationError(f"cannot serialize config value {v!r}")


def save_config(path, cfg: PipelineConfig) -> None:
    """Emit the configuration as TOML; parse(save(parse(x))) == parse(x)."""
    d = cfg.to_dict()
    lines = []
    scalars = {k: v for k, v in d.items() if not isinstance(v, dict)}
    for k, v in scalars.items():
        lines.append(f"{k} = {_toml_value(v)}")
    for sect, sub in d.items():
        if isinstance(sub, dict):
            lines.append("")
            lines.append(f"[{sect}]")
            for k, v in sub.items():
                lines.append(f"{k} = {_toml_value(v)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_config(path) -> PipelineConfig:
    with open(path, "rb") as fh:
        data = _toml.load(fh)
    cfg = PipelineConfig.from_dict(data)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------

def desk_constant_profile() -> PipelineConfig:
    """Reduced-scale constant-speed experiment; minutes on a workstation."""
    cfg = PipelineConfig(label="desk-constant")
    cfg.medium = MediumSpec(kind="constant", c=1.0)
    cfg.validate()
    return cfg


def desk_lens_profile() -> PipelineConfig:
    """Reduced-scale lens-model experiment (half the full resolution)."""
    cfg = PipelineConfig(label="desk-lens")
    cfg.medium = MediumSpec(kind="lens")
    cfg.validate()
    return cfg


def full_lens_profile() -> PipelineConfig:
    """The full-resolution lens experiment: 39 x 241 sources, receiver
    lattice at half/tenth spacing.  Synthesis at this scale is compute-heavy
    (thousands of simulations); it is provided for completeness."""
    cfg = PipelineConfig(
        T=1.0, t0=0.1, ls=3.0, lr=4.5, dts=0.025, dxs=0.025, a=1381.6,
        dxr=0.0125, dtr=0.0025, label="full-lens")
    cfg.medium = MediumSpec(kind="lens")
    cfg.recon = ReconSpec(y_min=-1.5, y_max=1.5, y_step=0.025,
                          s_min=0.025, s_max=0.675, s_step=0.025,
                          h=0.05, alpha_scale=1e-2)
    cfg.solver = SolverSpec(dx=0.00625)
    cfg.validate()
    return cfg
