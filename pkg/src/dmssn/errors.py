"""Exception hierarchy shared across the package."""


class DmssnError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(DmssnError):
    """Invalid configuration, arguments, or domain-type invariant violation."""


class ShapeMismatchError(ValidationError):
    """Two arrays that must agree in shape do not."""


class CubeFormatError(DmssnError):
    """Malformed cube header or payload on disk."""


class TrainingDivergedError(DmssnError):
    """Non-finite loss or gradients encountered during optimization."""
