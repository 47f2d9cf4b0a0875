"""Error hierarchy for dualdescent."""

from __future__ import annotations

from typing import Any, Optional


class DualDescentError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 1


class StructuralError(DualDescentError):
    """Dimensions or block structure do not match."""


class ParameterError(DualDescentError):
    """A parameter value is outside its admissible range."""


class ConfigError(DualDescentError):
    """Invalid configuration, schema, or environment."""


class InvariantViolation(DualDescentError):
    """A runtime monitor failed during a solver run.

    Carries the monitor name, the iteration where it fired, both sides of the
    checked inequality and the partial trace so callers can still persist it.
    """

    exit_code = 3

    def __init__(
        self,
        monitor: str,
        iteration: int,
        message: str = "",
        lhs: Optional[float] = None,
        rhs: Optional[float] = None,
        trace: Optional[list[Any]] = None,
    ):
        self.monitor = monitor
        self.iteration = iteration
        self.lhs = lhs
        self.rhs = rhs
        self.trace = trace if trace is not None else []
        self.detail = message or f"{monitor} failed"
        detail = self.detail
        if lhs is not None and rhs is not None:
            detail = f"{detail} (lhs={lhs:.6g}, rhs={rhs:.6g})"
        super().__init__(f"iteration {iteration}: {detail}")


class OracleFailure(InvariantViolation):
    """The inner descent oracle could not produce nu-sufficient descent."""


class EquivalenceViolation(InvariantViolation):
    """Paired SDD-ADMM / penalty-ADMM trajectories drifted apart."""
