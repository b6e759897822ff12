"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration errors exit
with 2, numerical failures with 3, provenance mismatches with 4.
"""


class BcwaveError(Exception):
    """Base class for all package errors."""


class ConfigurationError(BcwaveError, ValueError):
    """A configuration or precondition is invalid (exit code 2)."""


class NumericalError(BcwaveError, RuntimeError):
    """A solve or assembly failed numerically (exit code 3)."""


class ProvenanceError(BcwaveError, RuntimeError):
    """Persisted stage inputs do not match their recorded hashes (exit code 4)."""


class DomainError(BcwaveError, ValueError):
    """A point query fell outside the stored grid extent."""


class DegenerateCapError(NumericalError):
    """A wave-cap source has (near-)zero volume scalar; the ratio estimators
    that divide by it are undefined for this cap."""
