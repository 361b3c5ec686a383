"""Exception hierarchy.

Everything raised on bad data, bad files or bad models derives from
:class:`DataError`; the command line maps those to exit code 2. Usage
problems derive from :class:`UsageError` (exit code 1).
"""


class HistonormError(Exception):
    """Base class for all package errors."""


class DataError(HistonormError):
    """Input data, file or model is unusable."""


class UsageError(HistonormError):
    """Caller supplied an invalid argument or configuration."""


# stain estimation
class InsufficientTissue(DataError):
    pass


class DegenerateStains(DataError):
    pass


# binary formats
class BadMagic(DataError):
    pass


class BadVersion(DataError):
    pass


class TruncatedFile(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class BadTemplateFile(DataError):
    pass


# network
class InvalidClassCount(UsageError, ValueError):
    pass


class InputTooSmall(DataError, ValueError):
    pass


# datasets and evaluation
class EmptyClass(DataError):
    pass


class BadPatchSize(DataError):
    pass


class UnreadableImage(DataError):
    pass


class BatchTooSmall(UsageError, ValueError):
    pass


class PaletteTooSmall(UsageError, ValueError):
    pass


class UnmappedClass(DataError):
    pass


class LengthMismatch(DataError, ValueError):
    pass


class EmptyInput(DataError, ValueError):
    pass


# configuration files
class UnknownKey(UsageError):
    pass


class MalformedLine(UsageError):
    pass
