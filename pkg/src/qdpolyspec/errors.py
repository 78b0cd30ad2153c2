"""Exception hierarchy shared by all modules."""


class QdPolyspecError(Exception):
    """Base class for all errors raised by this package."""


class ModelError(QdPolyspecError, ValueError):
    pass


class NegativeRate(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


class DegenerateSteadyState(ModelError):
    """The generator has more than one stationary state (disconnected model)."""


class NotTwoLevel(ModelError):
    pass


class NegativeDerivedRate(ModelError):
    pass


class AbsorbingState(QdPolyspecError, RuntimeError):
    pass


class EmptyRecord(QdPolyspecError, ValueError):
    pass


class TraceTooShort(QdPolyspecError, ValueError):
    pass


class NyquistViolation(QdPolyspecError, ValueError):
    pass


class TooFewParts(QdPolyspecError, ValueError):
    pass


class GridMismatch(QdPolyspecError, ValueError):
    pass


class NonDiagonalizable(QdPolyspecError, ArithmeticError):
    pass


class LevelsTooClose(QdPolyspecError, ValueError):
    pass


class NoDwells(QdPolyspecError, ValueError):
    pass


class NonConvergence(QdPolyspecError, RuntimeError):
    """Optimizer hit its iteration cap; ``best`` holds the best point seen."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
