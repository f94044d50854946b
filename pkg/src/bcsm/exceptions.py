"""Exception hierarchy shared by all modules."""


class BCSMError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(BCSMError, ValueError):
    """Invalid user input. ``row`` and ``column`` locate the offending cell when known."""

    def __init__(self, message, *, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column

    def to_dict(self):
        out = {"error": type(self).__name__, "message": str(self)}
        if self.row is not None:
            out["row"] = int(self.row)
        if self.column is not None:
            out["column"] = self.column
        return out


class LayoutError(ValidationError):
    """A nested layout is malformed or not identifiable."""


class EmptyIntervalError(ValidationError):
    """A censoring interval maps to an empty latent support."""


class UnsupportedLayoutError(BCSMError):
    """The requested fast-path operation needs a balanced layout."""


class NotPositiveDefiniteError(BCSMError, ValueError):
    """Covariance parameters fall outside the positive-definite region.

    ``index`` is the first factor ``q`` whose bound is violated.
    """

    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class NumericalError(BCSMError):
    """A numerical step failed (non-finite values, failed factorization)."""


class ImproperPosteriorError(NumericalError):
    """A conditional posterior has nonpositive shape or scale."""


class SingularPosteriorError(NumericalError):
    """A posterior precision matrix is not positive definite."""


class OracleCapError(BCSMError):
    """Dense materialization requested above the configured dimension cap."""
