"""Exception types raised by the solvers and toolkits."""


class DimensionError(ValueError):
    """Array shapes are inconsistent with the system configuration."""


class SolverError(RuntimeError):
    """Base class for failures reported by the optimization layer."""


class Infeasible(SolverError):
    """A (sub)problem has no feasible point.

    ``binding`` carries the indices of the constraints (IUs or EUs) that are
    identified as responsible, ``ratio`` an optional achieved/required ratio.
    """

    def __init__(self, message, binding=None, ratio=None):
        super().__init__(message)
        self.binding = list(binding) if binding is not None else []
        self.ratio = ratio


class NumericalFailure(SolverError):
    pass


class IterationLimit(SolverError):
    pass


class BudgetExhausted(SolverError):
    """The reflection state already consumes the whole IRS budget."""


class RankTooHigh(ValueError):
    pass


class NoFeasibleCandidate(SolverError):
    pass


class HypothesisViolated(ValueError):
    pass


class VerificationFailed(AssertionError):
    def __init__(self, message, constraint=None):
        super().__init__(message)
        self.constraint = constraint
