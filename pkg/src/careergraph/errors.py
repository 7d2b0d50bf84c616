"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericError -> 3.
"""


class CareerGraphError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(CareerGraphError):
    """Bad arguments, bad configuration, or misuse of an API contract."""


class DataError(CareerGraphError):
    """Malformed or invariant-violating input data."""


class NumericError(CareerGraphError):
    """Non-finite values or failed numerical checks."""
