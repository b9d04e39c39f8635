"""Exception hierarchy.

Every failure class maps to one CLI exit code (see ``robusthedge.cli``).
"""


class RobustHedgeError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(RobustHedgeError):
    """Malformed or incomplete configuration."""

    exit_code = 2


class DomainError(RobustHedgeError):
    """Input outside the truncated state domain."""

    exit_code = 2


class ValidationError(RobustHedgeError):
    """A standing modelling assumption is violated."""

    exit_code = 3


class VolatilityValidationError(ValidationError):
    pass


class PenaltyValidationError(ValidationError):
    pass


class UtilityDegeneracyError(ValidationError):
    pass


class ScenarioValidationError(ValidationError):
    pass


class NumericError(RobustHedgeError):
    """Non-finite values, failed solves, non-convergence."""

    exit_code = 4


class SingularityError(NumericError):
    pass


class ConvergenceError(NumericError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class ResolutionError(NumericError):
    pass


class ShapeError(NumericError):
    pass


class CalibrationError(NumericError):
    pass


class ConditioningError(NumericError):
    pass


class BudgetError(NumericError):
    pass


class AdmissibilityError(RobustHedgeError):
    """A simulated P&L path left the admissible cash band."""

    exit_code = 5

    def __init__(self, message, path=None, step=None):
        super().__init__(message)
        self.path = path
        self.step = step
