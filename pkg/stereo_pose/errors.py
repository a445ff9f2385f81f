"""
Exceptions raised by the stereo_pose package.

Validation-type errors subclass ``ValueError`` so callers can keep catching the
builtin type; the CLI maps ``ConfigurationError`` and ``ValidationError`` to exit
code 1 and everything else to exit code 2.
"""


class StereoPoseError(Exception):
    """Base class of every error raised by stereo_pose."""


class BehindCameraError(StereoPoseError, ValueError):
    """A point with z <= 0 was projected."""


class InvalidDepthError(StereoPoseError, ValueError):
    """A depth value <= 0 was back-projected."""


class InvalidDisparityError(StereoPoseError, ValueError):
    """Zero or negative disparity/depth in a disparity-depth conversion."""


class InvalidRotationError(StereoPoseError, ValueError):
    """A matrix is not a proper rotation."""


class InsufficientDataError(StereoPoseError, ValueError):
    """Too few correspondences (or valid lifts) for a solver."""


class DegenerateConfigurationError(StereoPoseError, ValueError):
    """Collinear samples or another configuration no hypothesis can be built from."""


class NumericError(StereoPoseError, ArithmeticError):
    """Non-finite values appeared inside an optimisation."""


class ConfigurationError(StereoPoseError, ValueError):
    """Invalid configuration value, unknown key, or strategy/input mismatch."""


class ValidationError(StereoPoseError, ValueError):
    """Inputs that are individually valid but inconsistent with each other."""


class SceneFormatError(StereoPoseError, ValueError):
    """Malformed or inconsistent BOP scene files."""

    def __init__(self, message: str, path: str = None, key: str = None) -> None:

        context = []
        if path is not None:
            context.append(f"file={path}")
        if key is not None:
            context.append(f"key={key}")

        if context:
            message = f"{message} ({', '.join(context)})"

        super().__init__(message)

        self.path = path
        self.key  = key


class CorruptArchiveError(StereoPoseError, ValueError):
    """Feature archive failed its checksums or is truncated."""


class ArchiveVersionError(StereoPoseError, ValueError):
    """Feature archive written by an unknown format version or with unknown channels."""


class GenerationError(StereoPoseError, RuntimeError):
    """Synthetic scene generation could not satisfy the configuration."""
