"""Exception hierarchy; the CLI maps each family to an exit code."""


class DjumpError(Exception):
    exit_code = 3


class ConfigError(DjumpError, ValueError):
    """Bad configuration key, value or parameter combination."""

    exit_code = 2


class NumericalError(DjumpError, ArithmeticError):
    """A numerical invariant was violated during a computation."""

    exit_code = 3


class InvalidGeometryError(NumericalError, ValueError):
    pass


class DegenerateCollapseError(NumericalError):
    """A jump was applied to a state with zero amplitude in that channel."""


class TimestepTooLargeError(NumericalError):
    pass


class InvariantViolation(NumericalError):
    pass


class DegenerateSweepError(NumericalError, ValueError):
    pass


class ValidationFailed(DjumpError):
    exit_code = 4
