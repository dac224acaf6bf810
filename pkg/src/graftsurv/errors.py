"""Exception hierarchy.

Each class carries the process exit code the CLI maps it to.
"""


class GraftSurvError(Exception):
    exit_code = 1


class ConfigError(GraftSurvError, ValueError):
    """Invalid user configuration or arguments."""

    exit_code = 1


class SchemaError(GraftSurvError, ValueError):
    """Input file does not match the expected columns."""

    exit_code = 2


class DataError(GraftSurvError, ValueError):
    """Input values violate a data contract (duplicates, nonpositive labs, ...)."""

    exit_code = 2


class ConvergenceError(GraftSurvError, ArithmeticError):
    """A numerical fit diverged or could not be completed."""

    exit_code = 3


class UndefinedMetricError(GraftSurvError, ValueError):
    """A concordance-type statistic has no comparable pairs."""

    exit_code = 3
