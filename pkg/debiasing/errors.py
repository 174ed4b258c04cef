"""
errors.py

The exceptions and warnings raised by debiasing.

Input problems are `InputError`s (also `ValueError`s), numerical failures are
`NumericalError`s (also `ArithmeticError`s). The command line maps the first
family to exit code 1 and the second one to exit code 2.
"""

import typing


def error_message(summary: str, reason: str = None, message: str = None) -> str:
    """
    Internal function used to generate the errors' messages

    Parameters
    ----------
    summary: str
        What failed
    reason: str
        The short reason of the error
    message: str
        A longer explanation added on its own line

    Returns
    -------
    str
        The message of the error
    """
    result = str(summary)
    if reason:
        result += " ({})".format(reason)
    if message:
        result += "\nWarning: {}".format(message)
    return result


class DebiasingError(Exception):
    """The base class for every error raised by debiasing"""


class InputError(DebiasingError, ValueError):
    """Invalid arguments or data"""


class ConfigError(InputError):
    """An invalid configuration file"""

    def __init__(self, message: str, line: int = None, key: str = None) -> None:
        self.line = line
        self.key = key
        if line is not None:
            message = "line {}: {}".format(line, message)
        super().__init__(message)


class NumericalError(DebiasingError, ArithmeticError):
    """A numerical procedure failed"""


class NotPositiveDefinite(NumericalError):
    """A matrix which should be symmetric positive definite is not"""


class NotConverged(NumericalError):
    """An iterative solver exhausted its iterations"""

    def __init__(self, message: str, beta: typing.Any = None, violation: float = None, iterations: int = None) -> None:
        super().__init__(message)
        self.beta = beta
        """The best iterate found"""
        self.violation = violation
        """The KKT violation of `beta`"""
        self.iterations = iterations


class DegenerateActiveSet(NumericalError):
    """The linear system restricted to the active set is numerically singular"""


class DegenerateCorrection(NumericalError):
    """n - df is numerically zero, the de-biasing correction is undefined"""


class NonsmoothPoint(NumericalError):
    """The support changed inside a finite-difference stencil"""


class InvalidVariance(NumericalError):
    """A variance used to studentize is not positive"""


class Degenerate(NumericalError):
    """A Monte Carlo variance estimate is not positive"""


class ExperimentError(NumericalError):
    """Too many Monte Carlo replications failed"""


class DebiasingWarning(UserWarning):
    """The base class for the warnings emitted by debiasing"""


class IllConditionedGroupWarning(DebiasingWarning):
    """An active group has a norm close to the zero threshold"""


class NormBoundWarning(DebiasingWarning):
    """The norm of w0 exceeds its theoretical bound"""


class InterpolationWarning(DebiasingWarning):
    """The fit interpolates the data (zero residual)"""
