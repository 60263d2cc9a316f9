"""Exception hierarchy. Each class carries the CLI exit status it maps to."""


class TerraclassError(Exception):
    exit_code = 1


class DataError(TerraclassError, ValueError):
    """Malformed or inconsistent input data (headers, ROIs, documents)."""

    exit_code = 3


class NumericalError(TerraclassError, ArithmeticError):
    """A numerical procedure failed, e.g. a covariance stayed indefinite."""

    exit_code = 4
