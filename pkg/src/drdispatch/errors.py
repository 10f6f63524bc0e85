"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`DispatchError`; the CLI maps model/numeric failures to exit code 1.
"""


class DispatchError(Exception):
    pass


class ParseError(DispatchError):
    pass


class ValidationError(DispatchError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class SingularTopology(DispatchError):
    pass


class DimensionMismatch(DispatchError, ValueError):
    pass


class IndexOutOfRange(DispatchError, IndexError):
    pass


class TooFewSamples(DispatchError):
    pass


class NotSymmetric(DispatchError, ValueError):
    pass


class RejectionStall(DispatchError):
    pass


class KappaOutOfRange(DispatchError, ValueError):
    pass


class SolverFailure(DispatchError):
    pass


class NumericalFailure(SolverFailure):
    pass


class BudgetInfeasible(DispatchError):
    def __init__(self, message, group=None, slab=None):
        self.group = group
        self.slab = slab
        super().__init__(message)


class InfeasibleRobust(DispatchError):
    def __init__(self, message, diagnosis=None):
        self.diagnosis = diagnosis
        super().__init__(message)


class InfeasibleScenario(DispatchError):
    pass
