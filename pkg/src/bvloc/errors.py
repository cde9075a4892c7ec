"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`BVLocError`
so callers (the CLI in particular) can map families of failures to exit codes.
"""


class BVLocError(Exception):
    pass


class InvalidOperandError(BVLocError, ValueError):
    pass


class DegenerateMetricError(BVLocError, ValueError):
    pass


class PreconditionError(BVLocError):
    """A theorem hypothesis or catalog construction check failed."""

    def __init__(self, message, check=None):
        super().__init__(message)
        self.check = check


class NonKillingFieldError(PreconditionError):
    pass


class NonIsolatedFixedPointError(PreconditionError):
    pass


class MorseBottViolationError(PreconditionError):
    pass


class InvariantVolumeViolationError(PreconditionError):
    pass


class EquivarianceError(PreconditionError):
    pass


class WrongEvaluatorError(PreconditionError):
    pass


class IntegrationDomainError(BVLocError, ArithmeticError):
    pass


class UnknownEntryError(BVLocError, KeyError):
    pass
