"""Exception hierarchy shared by every module.

Each class maps to one failure category so callers (and the CLI) can react
without parsing messages.
"""

from __future__ import annotations


class CnemfError(Exception):
    """Base class for all library errors."""


class ConfigError(CnemfError, ValueError):
    """Malformed input: wrong shapes, unknown identifiers, bad settings."""


class DomainError(CnemfError, ValueError):
    """Input is well formed but outside the mathematical domain of the operation."""


class UnsupportedError(CnemfError):
    """Requested combination is not implemented (e.g. block count not dividing N)."""


class PreconditionError(CnemfError, ValueError):
    """A documented precondition was violated by the caller."""


class BudgetError(CnemfError):
    """Exact computation refused because it would exceed the configured budget."""


class ConvergenceError(CnemfError):
    """Iteration stopped before reaching the requested tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
