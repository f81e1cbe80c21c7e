"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: usage errors exit with 1,
data errors with 2 and numeric failures with 3.
"""


class IqaError(Exception):
    """Base class for every error raised by this package."""


class UsageError(IqaError):
    """Caller misused an interface (bad arguments, invalid config)."""


class DataError(IqaError):
    """Input data is missing, malformed or violates a declared contract."""


class NumericError(IqaError):
    """A computation is undefined or degenerate for the given input."""


# --- file / image I/O ---------------------------------------------------

class MissingFileError(DataError):
    pass


class UnsupportedFormatError(DataError):
    pass


class CorruptImageError(DataError):
    pass


class UnwritablePathError(DataError):
    pass


# --- geometry -----------------------------------------------------------

class CropSizeError(DataError):
    """Requested crop exceeds the image extent."""


class ImageTooSmallError(DataError):
    """Image is smaller than an operation's kernel or input size."""


# --- labels / manifests -------------------------------------------------

class RangeError(DataError):
    """A value lies outside its declared range."""


class EmptySourceError(DataError):
    pass


class DuplicatePathError(DataError):
    pass


class LeakageError(DataError):
    """A test-set path appeared on the training side."""


class ManifestError(DataError):
    pass


# --- models / checkpoints -----------------------------------------------

class ConfigError(UsageError):
    pass


class ShapeMismatchError(UsageError):
    pass


class ChecksumError(DataError):
    pass


class FormatVersionError(DataError):
    pass


class ModelStateError(UsageError):
    """Operation not applicable to the model's current head/provenance."""


# --- numerics -----------------------------------------------------------

class DegenerateInputError(NumericError):
    """Zero variance, all-equal ranks, no active pairs and similar."""


# --- rating service -----------------------------------------------------

class SessionError(DataError):
    pass
