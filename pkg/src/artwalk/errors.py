"""Exception taxonomy shared by all artwalk modules."""


class ArtwalkError(Exception):
    """Base class for all package-specific errors."""


class FormatError(ArtwalkError):
    """Unsupported or malformed image file format."""


class DegenerateGeometryError(ArtwalkError):
    """Collinear points, singular transforms, or otherwise unusable geometry."""


class PointAtInfinityError(ArtwalkError):
    """A projective mapping sent a point to (or near) the line at infinity."""


class ShapeMismatchError(ArtwalkError):
    """Array or raster dimensions do not agree."""


class PlacementError(ArtwalkError):
    """A foreground cutout does not fit inside the scene."""


class GenerationError(ArtwalkError):
    """Scene generation could not satisfy a placement constraint."""


class InputError(ArtwalkError):
    """Inconsistent user-supplied inputs (misaligned lists, bad config)."""


class AdapterError(ArtwalkError):
    """Base class for external detector adapter failures."""


class AdapterTimeoutError(AdapterError):
    """The adapter did not answer within the configured timeout."""


class AdapterDeadError(AdapterError):
    """The adapter process exited or closed its output stream."""


class AdapterProtocolError(AdapterError):
    """The adapter sent something that violates the exchange protocol."""

    def __init__(self, message: str, payload: str | None = None):
        super().__init__(message)
        self.payload = payload


class AdapterRequestError(AdapterError):
    """The adapter answered a request with an explicit error message."""
