"""Boundary-control reconstruction of acoustic wave speeds.

The package simulates Neumann-to-Dirichlet boundary data for 2D acoustic
waves on a half-space, assembles the connecting operator from traces alone,
solves regularized blind control problems that concentrate wavefields on
wave caps, and reconstructs the semi-geodesic coordinate transform and the
isotropic wave speed.  An anisotropic variant recovers the metric tensor in
semi-geodesic coordinates from internal data.
"""

from . import aniso, basis, boundary_ops, config, control, forward, medium, \
    pipeline, reconstruct, storage
from .errors import (BcwaveError, ConfigurationError, DegenerateCapError,
                     DomainError, NumericalError, ProvenanceError)

__version__ = "0.1.0"

__all__ = [
    "aniso", "basis", "boundary_ops", "config", "control", "forward",
    "medium", "pipeline", "reconstruct", "storage",
    "BcwaveError", "ConfigurationError", "DegenerateCapError", "DomainError",
    "NumericalError", "ProvenanceError",
]
