"""Exception hierarchy.

Errors deriving from :class:`DegeneracyError` signal a statistical or
numerical degeneracy in the data (the CLI maps them to exit status 2);
everything else is a usage/configuration problem (exit status 1).
"""


class CueArError(Exception):
    """Base class for all package errors."""


class DegeneracyError(CueArError):
    """The data or design is statistically degenerate."""


class UsageError(CueArError, ValueError):
    """Invalid arguments or configuration."""


class InvalidMatrix(UsageError):
    pass


class InvalidThreshold(UsageError):
    pass


class InvalidProbability(UsageError):
    pass


class InvalidHorizon(UsageError):
    pass


class InvalidCovariance(UsageError):
    pass


class SingularWeightMatrix(DegeneracyError):
    pass


class MomentEvaluationError(DegeneracyError):
    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class OrderConditionViolated(DegeneracyError):
    pass


class InsufficientSample(DegeneracyError):
    pass


class OptimizationFailed(DegeneracyError):
    pass


class SingularDesign(DegeneracyError):
    pass


class DegenerateDesign(DegeneracyError):
    pass
