"""Career trajectory forgery detection over heterogeneous career graphs."""

__version__ = "0.1.0"

from .errors import CareerGraphError, DataError, NumericError, UsageError

__all__ = [
    "CareerGraphError",
    "DataError",
    "NumericError",
    "UsageError",
    "__version__",
]
