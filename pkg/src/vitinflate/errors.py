"""Exception types shared across the package."""


class ShapeError(ValueError):
    """An array has the wrong rank or dimensions for the operation."""


class NonFiniteError(FloatingPointError):
    """NaN or inf reached an operation that cannot propagate it meaningfully."""


class MissingTensorError(KeyError):
    """A canonical tensor name is absent from a checkpoint."""


class ArchiveError(ValueError):
    """Base class for every archive decoding failure."""


class TruncatedArchiveError(ArchiveError):
    """The buffer ends before the declared header or data section does."""


class MalformedHeaderError(ArchiveError):
    """The header is not valid JSON or does not have the expected structure."""


class OffsetMismatchError(ArchiveError):
    """Data offsets are out of bounds, overlapping, or disagree with the shape."""


class UnsupportedDtypeError(ArchiveError):
    """The header declares a dtype the format does not support."""


class VolumeValidationError(ArchiveError):
    """Voxel payload decoded but violates volume or mask invariants."""


class DegenerateRangeError(ValueError):
    """Intensity normalization range has zero or negative width."""


class UndefinedMetricError(ValueError):
    """The requested statistic is undefined for this input."""
