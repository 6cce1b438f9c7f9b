class SingularGram(ArithmeticError):
    """Support Gram matrix is numerically rank deficient."""


class NotPositiveDefinite(ValueError):
    """A precision matrix failed the positive-definiteness pivot check."""


class InvalidState(ValueError):
    """A sampler was asked to draw from a degenerate conditional."""


class InvalidInit(ValueError):
    """The initial support of a chain has zero posterior mass."""


class DegenerateTruth(UserWarning):
    """The true Cholesky factor has no nonzeros, so TPR and p_bar_1 are conventions."""


class ColumnError(RuntimeError):
    """A per-column chain failed; carries the column index."""

    def __init__(self, column: int, cause: Exception):
        super().__init__(f"column {column}: {cause}")
        self.column = column
        self.cause = cause
