"""Exception types shared across the pipeline; the CLI maps them to exit codes."""


class DiftError(Exception):
    """Base class for pipeline errors."""


class DataError(DiftError, ValueError):
    """Bad input data: malformed files, shapes that do not fit, missing paths."""


class ArchMismatchError(DataError):
    """A model file does not match the architecture the caller asked for."""


class NumericError(DiftError, ArithmeticError):
    """Training produced a non-finite loss."""
