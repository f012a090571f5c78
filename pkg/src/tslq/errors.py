"""Exception types shared across the package."""


class TslqError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(TslqError, ValueError):
    pass


class NotPositiveDefinite(TslqError, ValueError):
    pass


class NotOneDimensional(TslqError, ValueError):
    pass


class Unstabilizable(TslqError, ArithmeticError):
    """Riccati iterates diverged: the pair (A, B) is treated as having P = +inf."""


class EmptyAdmissibleSet(TslqError):
    pass


class EmptyIntersection(TslqError):
    pass


class LambdaTooSmall(TslqError, ValueError):
    pass


class RejectionBudgetExceeded(TslqError):
    """Rejection sampling into the admissible set gave up.

    Attributes
    ----------
    attempts : int
        Number of candidates drawn.
    last_candidate : ndarray
        The last rejected candidate.
    acceptance_estimate : float
        Fraction of accepted draws (0 when nothing was accepted).
    """

    def __init__(self, attempts, last_candidate, acceptance_estimate=0.0):
        self.attempts = attempts
        self.last_candidate = last_candidate
        self.acceptance_estimate = acceptance_estimate
        super().__init__(
            f"no admissible sample after {attempts} attempts "
            f"(acceptance estimate {acceptance_estimate:.3g})"
        )


class NumericalBlowup(TslqError, ArithmeticError):
    pass


class MissingThetaTilde(TslqError):
    pass


class WeightNotLogConcave(TslqError, ValueError):
    pass


class AllRunsFailed(TslqError):
    pass


class ConfigInvalid(TslqError, ValueError):
    pass
