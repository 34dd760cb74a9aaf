"""Exception types raised across the package."""


class DynSketchError(Exception):
    """Base class for all errors raised by dynsketch."""


class EmptyStructureError(DynSketchError, ValueError):
    """Sampling was requested from a structure with zero total weight."""


class ConvergenceError(DynSketchError, RuntimeError):
    """An iterative kernel failed to converge or produced NaN."""


class RankDeficientError(DynSketchError, ValueError):
    """A factorization met a pivot below the numerical rank tolerance."""


class AcceptanceError(DynSketchError, RuntimeError):
    """A rejection-sampling acceptance ratio exceeded one.

    This means the embedding event the sampler relies on did not hold, so
    silently clipping would bias the output distribution.
    """


class StageError(DynSketchError, ValueError):
    """A pipeline stage produced an all-zero matrix."""

    def __init__(self, stage: str, message: str = "produced a zero matrix"):
        self.stage = stage
        super().__init__(f"stage {stage!r}: {message}")


class MatrixMarketError(DynSketchError, ValueError):
    """Malformed MatrixMarket or bag-of-words input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
