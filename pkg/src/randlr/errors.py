"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes, so each error kind a caller may
want to distinguish gets its own class.
"""


class RandLRError(Exception):
    """Base class for all library errors."""


class DimensionError(RandLRError, ValueError):
    """Operand shapes disagree or a rank/size parameter is out of range."""


class NotSymmetricError(DimensionError):
    """A Nystrom method was handed a non-symmetric matrix."""


class SingularCoreError(RandLRError, ArithmeticError):
    """The plain core has an exact zero on the diagonal of R.

    Plain generalized Nystrom cannot proceed; use the stabilized variant.
    """


class KernelError(RandLRError, RuntimeError):
    """A dense kernel failed (e.g. SVD did not converge)."""


class CapExceededError(RandLRError, MemoryError):
    """A dense materialization or oracle would exceed the configured size cap."""


class HypothesisError(RandLRError, ValueError):
    """Inputs violate the hypotheses of a theoretical bound."""


class ContainerError(RandLRError, OSError):
    """A factor container is unreadable, truncated or inconsistent."""


class VersionMismatchError(ContainerError):
    pass


class MatrixMarketError(RandLRError, ValueError):
    """Malformed Matrix Market input; carries the 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MMHeaderError(MatrixMarketError):
    pass


class MMIndexError(MatrixMarketError):
    pass


class MMFieldError(MatrixMarketError):
    """The file declares a field other than real/integer."""


class MMDataError(MatrixMarketError):
    """Wrong entry count or an unparsable entry line."""
