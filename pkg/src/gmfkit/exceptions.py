"""Exception types raised across the package."""


class GmfError(Exception):
    """Base class for all gmfkit errors."""


class DomainError(GmfError, ValueError):
    """A value lies outside the domain of a family, link or deviance."""


class ConfigError(GmfError, ValueError):
    """An invalid configuration, argument combination or degenerate setup."""


class DivergenceError(GmfError, ArithmeticError):
    """The objective became non-finite during optimization.

    Carries the last finite state on the ``state`` attribute so callers can
    inspect or restart from it.
    """

    def __init__(self, message, state=None, report=None):
        super().__init__(message)
        self.state = state
        self.report = report


class SingularSystemError(GmfError, ArithmeticError):
    """An inner least-squares system is singular despite damping.

    ``index`` names the offending row or column subproblem.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DegenerateError(GmfError, ValueError):
    """A metric denominator vanished (e.g. all test values equal the baseline)."""
