from typing import Optional


class ScatterlabError(Exception):
    """Base class for all lab errors; carries the CLI exit code."""
    exit_code = 1


class ConfigError(ScatterlabError):
    """Raised when an experiment config cannot be parsed or validated."""
    exit_code = 2

    def __init__(self, message: str, violations: Optional[list[str]] = None,
                 line: Optional[int] = None, column: Optional[int] = None):
        super().__init__(message)
        self.violations = violations or [message]
        self.line = line
        self.column = column


class SolverError(ScatterlabError):
    """Raised when a numerical solve fails or is too ill-conditioned to trust."""
    exit_code = 3

    def __init__(self, message: str, condition: Optional[float] = None):
        super().__init__(message)
        self.condition = condition


class NoRootError(SolverError):
    """Raised when a transcendental equation has no root in the requested interval."""
    pass


class DegenerateProfileError(SolverError):
    """Raised when the angular matching system is singular."""
    pass


class SpecialFunctionError(SolverError):
    """Raised for special-function calls outside their documented domain or range."""
    pass


class ContractViolationError(ScatterlabError):
    """Raised when a pre-condition between modules is broken."""
    exit_code = 4


class DegenerateGeometryError(ContractViolationError):
    """Raised for collinear point sets and other degenerate shapes."""
    pass
