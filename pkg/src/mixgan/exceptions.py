"""Exception hierarchy shared across the package."""


class MixganError(Exception):
    """Base class for all package errors."""


class FormatError(MixganError, ValueError):
    """A file does not follow the expected binary layout."""


class ShapeError(MixganError, ValueError):
    """An array has the wrong rank, channel count or spatial size."""


class ArgumentError(MixganError, ValueError):
    """An argument is empty, out of range or otherwise unusable."""


class EmptyDatasetError(MixganError, ValueError):
    """A data source yielded no usable images."""


class NonFiniteError(MixganError, FloatingPointError):
    """A NaN or infinity showed up in a loss or gradient."""


class StageError(MixganError, RuntimeError):
    """A checkpoint is tagged with the wrong training stage."""


class VersionError(MixganError, ValueError):
    """A checkpoint was written by an incompatible format version."""


class DegenerateKernelError(MixganError, ValueError):
    """The median-heuristic bandwidth collapsed to zero."""


class IoError(MixganError, OSError):
    """An output file could not be written."""


class ConfigError(MixganError, ValueError):
    """A run configuration is malformed, incomplete or has unknown keys."""
