"""Exception hierarchy. Every error raised on purpose derives from ``TidalStreamError``."""


class TidalStreamError(Exception):
    pass


class ValidationError(TidalStreamError, ValueError):
    pass


class EmptyOrSingleton(ValidationError):
    pass


class NonFinite(ValidationError):
    pass


class NonPositiveSigma(ValidationError):
    pass


class MissingProbability(ValidationError):
    pass


class BadConfig(ValidationError):
    pass


class AllZeroWeights(ValidationError):
    pass


class BadPin(ValidationError):
    pass


class NonPositiveKnot(ValidationError):
    pass


class BadWeight(ValidationError):
    pass


class BadGrid(ValidationError):
    pass


class NonPositiveArg(ValidationError):
    pass


class BadStatistic(ValidationError):
    pass


class EmptySide(TidalStreamError):
    """No star on one side of a bisector."""


class FlatKappa(TidalStreamError):
    """The split-point criterion is constant, so the rescaled curve is undefined."""


class NonPositiveCurvature(TidalStreamError):
    pass


class DegenerateRegressor(TidalStreamError):
    pass


class NoConvergence(TidalStreamError):
    """A fixed-point iteration hit its cap. ``result`` holds the last iterate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ParseError(TidalStreamError, ValueError):
    def __init__(self, row, column, reason):
        super().__init__(f"row {row}, column {column!r}: {reason}")
        self.row = row
        self.column = column
        self.reason = reason


class SchemaError(TidalStreamError, ValueError):
    pass
