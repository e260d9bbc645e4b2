"""Exception types raised across the package."""


class CISRError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(CISRError, ValueError):
    pass


class NonStochasticRow(CISRError, ValueError):
    pass


class UnsafeNotTerminal(CISRError, ValueError):
    pass


class ResetIntoTrigger(CISRError, ValueError):
    pass


class TriggerOutOfRange(CISRError, ValueError):
    pass


class NegativeLambda(CISRError, ValueError):
    pass


class ZeroMassDegenerate(CISRError, ArithmeticError):
    pass


class BudgetZero(CISRError, ValueError):
    pass


class StageOutOfRange(CISRError, IndexError):
    pass


class UnknownIntervention(CISRError, KeyError):
    pass


class SingularKernel(CISRError, ArithmeticError):
    pass


class OptFailed(CISRError, RuntimeError):
    pass


class EmptySpace(CISRError, ValueError):
    pass


class BudgetExceeded(CISRError, RuntimeError):
    pass


class NoFeasible(CISRError, RuntimeError):
    pass


class MapError(CISRError, ValueError):
    """Malformed map text; ``kind`` is one of BadCharacter, RaggedRows, MissingStart."""

    def __init__(self, kind, message, position=None):
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.position = position


class GeometryDegenerate(CISRError, ArithmeticError):
    pass


class ConfigInvalid(CISRError, ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
