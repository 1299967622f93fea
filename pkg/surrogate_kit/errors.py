# errors.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""Errors for surrogate_kit.

Contains:
SurrogateKitError
InputError
RefinementOrderViolation
DomainViolation
InfeasibleBudget
NumericalError
FactorizationFailure
SingularNormalMatrix
SingularTransport
InvalidRegime
ExhaustedCandidates
RunTerminated
BudgetExhausted
IterationCapReached
Stagnated
"""


class SurrogateKitError(Exception):
    """Base class for errors raised by surrogate_kit itself."""


class InputError(SurrogateKitError, ValueError):
    """Exception for unexpected data passed in by the user."""


class RefinementOrderViolation(InputError):
    """Exception when a 'refinement' would make some tolerance larger.

    Also raised when the refined design does not contain the original points.
    """


class DomainViolation(InputError):
    """Exception when a parameter point lies outside the domain box."""


class InfeasibleBudget(InputError):
    """Exception when the work budget doesn't even cover the current design."""


class NumericalError(SurrogateKitError, ArithmeticError):
    """Exception for numerical breakdowns."""


class FactorizationFailure(NumericalError):
    """Exception when the kriging matrix is not SPD even after maximum jitter.

    Usually means duplicate or near-duplicate points, or invalid tolerances.
    """


class SingularNormalMatrix(NumericalError):
    """Exception when the Gauss-Newton matrix can't be factorized.

    Rank-deficient Jacobian with an improper prior.
    """


class SingularTransport(NumericalError):
    """Exception when the error transport factor is undefined.

    Retry with a positive regularization.
    """


class InvalidRegime(NumericalError):
    """Exception when the exact radius bound has a nonpositive denominator."""


class ExhaustedCandidates(SurrogateKitError):
    """Exception when no admissible candidate point could be found."""


class RunTerminated(SurrogateKitError):
    """Base for conditions which stop the adaptive loop before convergence.

    These are recorded in the run artifacts rather than propagated.
    """


class BudgetExhausted(RunTerminated):
    """The maximum total work has been spent."""


class IterationCapReached(RunTerminated):
    """The maximum number of design iterations has been done."""


class Stagnated(RunTerminated):
    """The estimated error stopped improving (position-only baseline)."""
