"""Exception hierarchy shared across the package.

The CLI maps :class:`ValidationError` to exit code 1 and
:class:`NumericalError` to exit code 2.
"""


class TwinPurifyError(Exception):
    """Base class for all package errors."""


class ValidationError(TwinPurifyError, ValueError):
    """Bad input: malformed file, wrong shape, out-of-range parameter."""


class NumericalError(TwinPurifyError, ArithmeticError):
    """Non-finite values, degenerate batches or optimizer failure."""


class NonFiniteError(NumericalError):
    pass


class DegenerateBatchError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass


class MonotoneLikelihoodError(ConvergenceError):
    pass
