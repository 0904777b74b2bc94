"""Exception hierarchy for the mosaic engine."""


class EngineError(Exception):
    """Base class for all engine errors."""


class DimensionError(EngineError):
    """Tensor shapes are incompatible for the requested operation."""


class ValidationError(EngineError):
    """A value violates a documented precondition or invariant."""


class NumericError(EngineError):
    """A computation produced NaN/Inf or an otherwise unusable value."""


class StateError(EngineError):
    """An object is in the wrong state for the requested operation."""


class FormatError(EngineError):
    """An image file has an unsupported format."""


class WeightFileError(EngineError):
    """Base class for weight-file load failures."""


class BadMagicError(WeightFileError):
    """The file does not start with the expected magic bytes."""


class VersionError(WeightFileError):
    """The file declares an unsupported format version."""


class TruncatedFileError(WeightFileError):
    """The file ends before all declared tensor payloads."""


class ChecksumError(WeightFileError):
    """The payload checksum does not match the stored value."""


class SpecMismatchError(WeightFileError):
    """Tensor shapes in the file disagree with the declared architecture."""
