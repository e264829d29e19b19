"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class NumericDegeneracyError(ArithmeticError):
    """Raised when every Monte Carlo weight is -inf or NaN.

    ``diagnostics`` carries whatever the estimator knew at the time (sample
    counts, the offending log-weights, the annealing state).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
