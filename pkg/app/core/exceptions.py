import logging
from typing import Any, Dict

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_OUTCOME = 2
EXIT_INTERNAL = 3


class PenDCError(Exception):
    """Base exception for solver-related errors"""
    def __init__(self, message: str, details: Dict[str, Any] = None):
        self.message = message
        self.details = details or {}
        super().__init__(self.message)


class UsageError(PenDCError):
    """Exception raised for malformed command-line input"""
    pass


class InvalidParameterError(PenDCError, ValueError):
    """Exception raised when an argument is outside its admissible range"""
    pass


class DimensionMismatchError(InvalidParameterError):
    """Exception raised when a vector does not match the instance dimension"""
    pass


class InstanceParseError(PenDCError):
    """Exception raised when an instance document cannot be parsed"""
    pass


class InstanceValidationError(PenDCError):
    """Exception raised when an instance violates its invariants"""
    def __init__(self, message: str, findings: list = None, details: Dict[str, Any] = None):
        self.findings = list(findings or [])
        details = dict(details or {})
        details.setdefault("findings", [str(f) for f in self.findings])
        super().__init__(message, details)


class PlanError(PenDCError):
    """Exception raised when a benchmark plan is invalid"""
    pass


class EngineError(PenDCError):
    """Exception raised when a subproblem engine fails unexpectedly"""
    pass


class OutcomeError(PenDCError):
    """Base for solve outcomes that are reported rather than crashes"""
    pass


class PreconditionError(OutcomeError):
    """Exception raised when an operation's precondition does not hold"""
    pass


class InfeasibleStartError(PreconditionError):
    """Exception raised when DCA is started outside the chance-constrained set"""
    pass


class SubproblemInfeasibleError(OutcomeError):
    """Exception raised when a convex subproblem has no feasible point"""
    pass


class BudgetExceededError(OutcomeError):
    """Exception raised when the oracle subset count exceeds its cap"""
    pass


# Exit-code handlers
def usage_exception_handler(exc: PenDCError) -> int:
    """Handle usage, parameter, plan and instance errors"""
    logger.warning(f"{exc.__class__.__name__}: {exc.message}", extra={"details": exc.details})
    for finding in exc.details.get("findings", []):
        logger.warning(f"  {finding}")
    return EXIT_USAGE


def outcome_exception_handler(exc: OutcomeError) -> int:
    """Handle infeasible starts, infeasible subproblems and budget overruns"""
    logger.warning(f"{exc.__class__.__name__}: {exc.message}", extra={"details": exc.details})
    return EXIT_OUTCOME


def engine_exception_handler(exc: EngineError) -> int:
    """Handle subproblem engine failures"""
    logger.error(f"Engine error: {exc.message}", extra={"details": exc.details})
    return EXIT_INTERNAL


def general_exception_handler(exc: Exception) -> int:
    """Handle general exceptions"""
    logger.error(f"Unexpected error: {str(exc)}", exc_info=exc)
    return EXIT_INTERNAL


# Ordered most specific first
EXCEPTION_HANDLERS = (
    (OutcomeError, outcome_exception_handler),
    (EngineError, engine_exception_handler),
    (UsageError, usage_exception_handler),
    (InvalidParameterError, usage_exception_handler),
    (InstanceParseError, usage_exception_handler),
    (InstanceValidationError, usage_exception_handler),
    (PlanError, usage_exception_handler),
    (Exception, general_exception_handler),
)


def handle_exception(exc: Exception) -> int:
    """Map an exception to its exit code through the registered handlers"""
    for exc_type, handler in EXCEPTION_HANDLERS:
        if isinstance(exc, exc_type):
            return handler(exc)
    return general_exception_handler(exc)
