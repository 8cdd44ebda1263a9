"""Exception types shared across the package.

Parser and validation errors carry a source location so tooling can point
at the offending line of a deck file.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class SourceLocation:
    """Position inside a deck file (1-based line/column)."""

    file: str
    line: int
    column: int = 1

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.column}"


class PetromatchError(Exception):
    """Base class for all package errors."""


class DeckError(PetromatchError):
    """Deck parsing / editing failure, optionally located."""

    def __init__(self, message: str, location: SourceLocation | None = None):
        self.location = location
        if location is not None:
            message = f"{location}: {message}"
        super().__init__(message)


class EmptyInput(DeckError):
    pass


class UnterminatedRecord(DeckError):
    pass


class UnknownInclude(DeckError):
    pass


class UnsupportedConstruct(DeckError):
    pass


class UnknownSection(DeckError):
    pass


class UnknownKeyword(DeckError):
    pass


class OccurrenceOutOfRange(DeckError):
    pass


class MalformedRecord(DeckError):
    pass


class PlaceholderPresent(DeckError):
    pass


class ParameterError(PetromatchError):
    """Parameter-space manipulation failure."""


class DuplicateName(ParameterError):
    pass


class TargetNotFound(ParameterError):
    pass


class InvalidBounds(ParameterError):
    pass


class UnknownParameter(ParameterError):
    pass


class IncompleteAssignment(ParameterError):
    pass


class OutOfBounds(ParameterError):
    pass


class MalformedTable(PetromatchError):
    pass


class MisfitError(PetromatchError):
    pass


class ZeroMeanHistory(MisfitError):
    pass


class LengthMismatch(MisfitError):
    pass


class EmptySeries(MisfitError):
    pass


class OptimizerError(PetromatchError):
    pass


class BudgetExhausted(OptimizerError):
    pass


class UnknownPoint(OptimizerError):
    pass


class DegenerateData(OptimizerError):
    pass


class SimulationError(PetromatchError):
    pass


class InvalidCase(SimulationError):
    pass


class NonConvergedLinearSolve(SimulationError):
    pass


class LaunchFailure(SimulationError):
    pass


class RunTimeout(SimulationError):
    pass


class NonZeroExit(SimulationError):
    def __init__(self, message: str, output_tail: str = ""):
        self.output_tail = output_tail
        super().__init__(message if not output_tail else f"{message}\n{output_tail}")


class MalformedResults(SimulationError):
    pass


class PipelineError(PetromatchError):
    pass


class IllegalPhase(PipelineError):
    pass


class InvalidEdit(PipelineError):
    pass


class NoParametersFound(PipelineError):
    pass


class DeckUnreadable(PipelineError):
    pass


class ServiceError(PetromatchError):
    """Session-service failure; each subclass maps onto an HTTP status."""


class UnknownSession(ServiceError):
    pass


class Busy(ServiceError):
    pass


class VersionConflict(ServiceError):
    pass


class NoCheckpoint(ServiceError):
    pass


class NotFinished(ServiceError):
    pass
