"""Exception hierarchy shared by every sosenergy module.

The CLI maps ConfigError to exit code 2 and NumericalError to exit code 3.
"""

from __future__ import annotations

from typing import Any


class EnergyError(Exception):
    """Root of all errors raised by sosenergy."""


class ConfigError(EnergyError):
    """Invalid run configuration; `lines` holds one message per offending field."""

    def __init__(self, message: str, lines: list[str] | None = None):
        super().__init__(message)
        self.lines = lines or []

    def __str__(self) -> str:
        if not self.lines:
            return super().__str__()
        return "\n".join([super().__str__(), *(f"  {line}" for line in self.lines)])


class NumericalError(EnergyError):
    """Base for failures of the numerical pipeline."""


class RiccatiError(NumericalError):
    pass


class NoStabilizingSolution(RiccatiError):
    pass


class NotPositiveDefinite(RiccatiError):
    pass


class NotPositiveSemidefinite(NumericalError):
    pass


class SingularOperator(NumericalError):
    pass


class IterationLimitExceeded(NumericalError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (achieved relative residual {residual:.3e})")
        self.residual = residual


class UnsupportedDrift(NumericalError):
    pass


class AssemblyError(NumericalError):
    pass


class NonFiniteObjective(NumericalError):
    pass


class IntegratorStepFailure(NumericalError):
    pass


class WindowFailure(NumericalError):
    """A window of the windowed fit failed; the last good factor travels with the error."""

    def __init__(self, message: str, window_index: int, last_factor: Any):
        super().__init__(f"window {window_index}: {message}")
        self.window_index = window_index
        self.last_factor = last_factor


class UnstableExcluded(EnergyError):
    """Relative errors are only defined for stable closed-loop runs."""
