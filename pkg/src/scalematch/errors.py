"""Exception hierarchy shared by all scalematch modules."""


class ScaleMatchError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(ScaleMatchError, ValueError):
    """An argument is outside its valid domain (sigma <= 0, kernel wider than image, ...)."""


class DecodeError(ScaleMatchError):
    """Encoded image bytes could not be parsed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedFormatError(DecodeError):
    """The image is well formed but uses a bit depth or colour type we do not read."""


class DegenerateImageError(ScaleMatchError, ValueError):
    """The image carries no usable signal, e.g. zero intensity variance."""


class BorderError(ScaleMatchError, ValueError):
    """A point or window lies too close to the image border for the requested operator."""


class DegenerateConfigurationError(ScaleMatchError, ValueError):
    """Point correspondences do not determine the requested model."""


class EstimationError(ScaleMatchError, ValueError):
    """Too few samples to estimate a statistic."""


class NoConsensusError(ScaleMatchError):
    """Robust estimation found no model supported by enough matches."""


class SchemaError(ScaleMatchError, ValueError):
    """A JSON document does not follow the expected schema.

    ``pointer`` is a JSON pointer to the offending field.
    """

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer}: {message}")
        self.pointer = pointer
