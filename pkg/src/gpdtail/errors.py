class DataError(ValueError):
    """Malformed input data; carries the 1-based CSV row when known."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class UnknownCategoryError(DataError):
    def __init__(self, covariate, label, row=None):
        self.covariate = covariate
        self.label = label
        super().__init__(f"unknown category {label!r} for covariate {covariate!r}", row=row)


class RankDeficientError(ValueError):
    def __init__(self, column):
        self.column = column
        super().__init__(
            f"design column {column!r} is identically zero among the exceedances; "
            "merge or drop that category")


class NumericalError(ArithmeticError):
    """A numerical step failed (non-positive-definite information, negative variance)."""


class NoFiniteEndpointError(ValueError):
    def __init__(self, xi):
        self.xi = xi
        super().__init__(f"no finite endpoint: shape xi={xi:.6g} is not negative")
