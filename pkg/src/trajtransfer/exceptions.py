"""Exception types raised across the package."""


class TrajTransferError(Exception):
    """Base class for package errors."""


class InvalidRotationError(TrajTransferError, ValueError):
    """A matrix that should be a rotation is malformed."""


class DegenerateDecompositionError(TrajTransferError, ValueError):
    """Euler decomposition at gimbal lock: the z angle is not unique."""


class AmbiguousIncrementError(TrajTransferError, ValueError):
    """Consecutive poses rotate by exactly pi; the twist axis sign is undefined."""


class DegenerateConfigurationError(TrajTransferError, ValueError):
    """Point configuration does not determine a rigid transform (e.g. collinear)."""


class InsufficientCorrespondencesError(TrajTransferError, ValueError):
    """Fewer correspondences than the estimator's minimal sample."""


class EstimationError(TrajTransferError, RuntimeError):
    """A pose estimator could not produce an estimate."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class RenderError(TrajTransferError, ValueError):
    """The object cannot be rendered from the given camera."""


class SamplingError(TrajTransferError, RuntimeError):
    """Rejection sampling gave up."""


class FitError(TrajTransferError, ValueError):
    """An error map cannot be fitted to the supplied samples."""
