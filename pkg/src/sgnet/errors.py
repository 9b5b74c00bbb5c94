"""Exception hierarchy shared by every sgnet module."""


class SgnError(Exception):
    """Base class for all sgnet errors."""


class ShapeError(SgnError, ValueError):
    """Tensor shapes are inconsistent with an operation."""


class ConfigError(SgnError, ValueError):
    """Invalid configuration or argument."""


class DataError(SgnError):
    """Input data could not be read or is invalid."""


class FormatError(DataError):
    """A file does not start with the expected magic / header."""


class LengthError(DataError):
    """A file is shorter (or longer) than its header declares."""


class ChecksumError(DataError):
    """Stored checksum does not match the file contents."""


class UnsupportedVersionError(DataError):
    """File format version is not understood by this build."""


class NumericError(SgnError, ArithmeticError):
    """Numerical failure: non-convergence, NaN loss, ..."""
