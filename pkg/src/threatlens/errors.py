"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: usage problems -> 1,
DataError -> 2, NumericError -> 3.
"""


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class DataError(ValueError):
    """Malformed or inconsistent input data (files, labels, schemas)."""


class NumericError(FloatingPointError):
    """A numeric invariant broke (NaN/Inf where finite values are required)."""
