"""Exception hierarchy shared across the package."""


class CwsError(Exception):
    """Base class for every error raised by cwsep."""


class WavFormatError(CwsError, ValueError):
    """Malformed RIFF/WAVE container."""


class UnsupportedFormatError(CwsError, ValueError):
    """Well-formed WAVE file using an encoding we do not decode."""


class ShapeError(CwsError, ValueError):
    pass


class BoundsError(CwsError, IndexError):
    pass


class SampleRateError(CwsError, ValueError):
    pass


class DesignError(CwsError, RuntimeError):
    """Filter-bank design could not meet the requested stopband attenuation."""

    def __init__(self, message, achieved_attenuation):
        super().__init__(message)
        self.achieved_attenuation = achieved_attenuation


class NormalizationError(CwsError, ValueError):
    """Window/hop pair does not overlap-add to a usable normalizer."""


class UndefinedReferenceError(CwsError, ValueError):
    pass


class StateError(CwsError, RuntimeError):
    pass


class NumericError(CwsError, FloatingPointError):
    pass


class IncompatibleCheckpointError(CwsError, ValueError):
    pass


class DatasetError(CwsError, OSError):
    pass


class ConfigError(CwsError, ValueError):
    pass
