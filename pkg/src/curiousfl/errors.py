"""Exception hierarchy shared by every module.

The CLI maps these to exit codes: configuration problems exit with 2,
numeric failures with 3 and I/O problems with 4.
"""


class CuriousFLError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CuriousFLError, ValueError):
    """Invalid configuration, infeasible sizes or inconsistent shapes."""


class ContractError(CuriousFLError, ValueError):
    """A caller violated an operation's precondition."""


class NumericError(CuriousFLError, ArithmeticError):
    """A computation produced NaN or Inf."""


class DataLoadError(CuriousFLError, OSError):
    """Base class for dataset loading failures."""


class BadMagicError(DataLoadError):
    """IDX file does not start with the expected magic number."""


class TruncatedFileError(DataLoadError):
    """IDX payload is shorter than its header promises."""


class CountMismatchError(DataLoadError):
    """Image and label files disagree on the number of examples."""
