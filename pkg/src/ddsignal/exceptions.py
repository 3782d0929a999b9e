"""Exception and warning types raised across the package."""


class DDSignalError(Exception):
    """Base class for all errors raised by ddsignal."""


class ConfigError(DDSignalError, ValueError):
    """A configuration file or argument is malformed."""


class DataError(DDSignalError, ValueError):
    """Input data violates a precondition."""


class MissingColumn(DataError):
    def __init__(self, column, available=()):
        self.column = column
        msg = f"column {column!r} not found in input header"
        if available:
            msg += f" (available: {', '.join(available)})"
        super().__init__(msg)


class ParseFailure(DataError):
    def __init__(self, row, column, value, reason="not a number"):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r} ({reason})")


class EmptyCell(DataError):
    def __init__(self, cells):
        self.cells = tuple(cells)
        names = ", ".join(f"(treat={t}, post={p})" for t, p in self.cells)
        super().__init__(f"empty difference-in-differences cell(s): {names}")


class NonPositiveOutcome(DataError):
    def __init__(self, count, context=""):
        self.count = count
        msg = f"log transform requires strictly positive outcomes; {count} non-positive value(s)"
        if context:
            msg += f" ({context})"
        super().__init__(msg)


class EstimationError(DDSignalError, ArithmeticError):
    """Estimation could not be carried out."""


class DegenerateWeights(EstimationError):
    pass


class DimensionMismatch(EstimationError, ValueError):
    pass


class ZeroBaseline(EstimationError):
    pass


class ZeroControlGrowth(EstimationError):
    pass


class MismatchedSamples(EstimationError):
    pass


class NoCrossing(EstimationError):
    pass


class RankDeficientWarning(UserWarning):
    """Raised as a warning: collinear columns are dropped and recorded on the fit."""


class NotConvergedWarning(UserWarning):
    """Fixed-effect absorption hit ``max_iter`` before reaching ``tol``."""
