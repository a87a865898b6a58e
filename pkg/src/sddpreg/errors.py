"""Exception types shared across the package."""


class SddpregError(Exception):
    """Base class for all library errors."""


# -- scenario lattice -------------------------------------------------------

class NonPositiveProbability(SddpregError):
    pass


class ProbabilitySumMismatch(SddpregError):
    pass


class EmptyStage(SddpregError):
    pass


class TreeTooLarge(SddpregError):
    pass


# -- cut pools --------------------------------------------------------------

class DimensionMismatch(SddpregError):
    pass


class NonFiniteCut(SddpregError):
    pass


# -- risk aggregation -------------------------------------------------------

class InvalidDistribution(SddpregError):
    pass


class ParameterOutOfRange(SddpregError):
    pass


# -- stage subproblems ------------------------------------------------------

class Infeasible(SddpregError):
    """Stage subproblem infeasible: relatively-complete-recourse violated."""


class Unbounded(SddpregError):
    """Stage subproblem unbounded: a bound is missing from the model."""


class SolverNumericalFailure(SddpregError):
    pass


class MissingDuals(SddpregError):
    pass


# -- drivers ----------------------------------------------------------------

class EmptyHistory(SddpregError):
    pass


# -- portfolio builders -----------------------------------------------------

class InvalidParams(SddpregError):
    pass


class ScenarioShapeMismatch(SddpregError):
    pass


class MalformedCsv(SddpregError):
    pass


class NonPositiveReturn(SddpregError):
    pass
