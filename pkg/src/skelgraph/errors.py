"""Exception hierarchy shared by the library and the CLI."""


class SkelGraphError(Exception):
    """Base class for every error raised by skelgraph."""

    exit_code = 1


class UsageError(SkelGraphError, ValueError):
    exit_code = 1


class DimensionError(SkelGraphError, ValueError):
    exit_code = 2


class ParameterError(SkelGraphError, ValueError):
    exit_code = 1


class FormatError(SkelGraphError, ValueError):
    exit_code = 2


class DataError(SkelGraphError, ValueError):
    exit_code = 2


class CheckpointError(SkelGraphError):
    exit_code = 2


class NumericError(SkelGraphError, ArithmeticError):
    """A primitive produced NaN or Inf."""

    exit_code = 3
