"""Shared exception types."""


class ShapeError(ValueError):
    """An array does not have the rank or extents an operation requires."""


class InvalidInputError(ValueError):
    """Array values violate an operation's preconditions (e.g. non-binary mask)."""


class TensorIOError(IOError):
    """Base class for tensor-file problems."""


class BadMagicError(TensorIOError):
    """File does not start with the expected magic tag."""


class UnsupportedVersionError(TensorIOError):
    """File declares a format version this reader does not understand."""


class UnsupportedDtypeError(TensorIOError):
    """File declares a dtype code this reader does not understand."""


class TruncatedPayloadError(TensorIOError):
    """File ends before the declared header or payload is complete."""


class TapeConsumedError(RuntimeError):
    """backward() was called twice on the same tape without a reset."""


class UndefinedLossError(ValueError):
    """Loss has no defined value (every pixel carries the ignore label)."""


class TrainingDivergedError(RuntimeError):
    """Loss became NaN/inf during training."""
