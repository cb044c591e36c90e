"""Exception hierarchy shared across the toolkit."""


class RWREError(Exception):
    """Base class for all toolkit errors."""


class DomainError(RWREError, ValueError):
    """Argument outside the domain of a formula."""


class UnsupportedLaw(RWREError, ValueError):
    pass


class InvalidRadius(RWREError, ValueError):
    pass


class InsufficientData(RWREError):
    pass


class NotOnLayer(RWREError, ValueError):
    pass


class InfeasibleConstants(RWREError, ValueError):
    pass


class DegenerateLadder(RWREError, ValueError):
    pass


class RegionTooLarge(RWREError):
    pass


class EmptyFront(RWREError):
    pass


class QuadratureFailure(RWREError):
    pass


class InfeasibleCoupling(RWREError):
    pass


class SingularCovariance(RWREError):
    pass


class HypothesisViolated(RWREError):
    def __init__(self, hypothesis: int, detail: str = ""):
        self.hypothesis = hypothesis
        super().__init__(f"hypothesis ({hypothesis}) violated: {detail}")


class ConditioningTooRare(RWREError):
    pass


class BudgetExhausted(RWREError):
    pass


class IncompleteRun(RWREError):
    pass


class AuditTooLong(RWREError):
    pass


class NotNestling(RWREError, ValueError):
    pass


class AllZeroCounts(RWREError):
    pass


class SchemaError(RWREError, ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)


class EmptyLedger(RWREError):
    pass


class InvariantViolation(RWREError, AssertionError):
    """A construction invariant failed at run time."""
