# tiacs/core/errors.py
"""
Exception hierarchy shared by the services and the CLI.

The CLI maps `InputValidationError` to exit code 2 and any other failure
inside a pipeline stage to exit code 3 (see `StageError`).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

EXIT_VALIDATION = 2
EXIT_STAGE_FAILURE = 3


@dataclass(frozen=True)
class RowError:
    """One offending row (or record) in an input file."""

    line: Optional[int]
    field: str
    message: str

    def __str__(self) -> str:
        where = f"line {self.line}" if self.line is not None else "record"
        return f"{where}: {self.field}: {self.message}"


class TiacsError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = EXIT_STAGE_FAILURE


class InputValidationError(TiacsError):
    """Raised when an input file or record violates its format or invariants."""

    exit_code = EXIT_VALIDATION

    def __init__(self, message: str, errors: Sequence[RowError] = ()):
        self.errors: List[RowError] = list(errors)
        if self.errors:
            shown = "; ".join(str(e) for e in self.errors[:10])
            more = f" (+{len(self.errors) - 10} more)" if len(self.errors) > 10 else ""
            message = f"{message}: {shown}{more}"
        super().__init__(message)


class ParseError(InputValidationError):
    """Malformed row; the message always names the line number."""

    def __init__(self, path: str, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}: line {line}: {message}")


class PreconditionError(TiacsError, ValueError):
    """An operation was called with arguments outside its contract."""


class UnknownNodeError(TiacsError, KeyError):
    """A node id that is not part of the road network."""

    def __init__(self, node_id: int):
        self.node_id = node_id
        super().__init__(f"unknown node {node_id}")

    def __str__(self) -> str:
        return f"unknown node {self.node_id}"


class ThresholdError(PreconditionError):
    """A distance threshold the proximity table cannot answer."""


class DegenerateTrajectoryError(TiacsError):
    """A trajectory that cannot host all its stays at the minimum duration."""


class RankDeficiencyError(TiacsError, ValueError):
    """Design matrix is not of full column rank."""

    def __init__(self, dependent_columns: Sequence[str]):
        self.dependent_columns = list(dependent_columns)
        super().__init__(
            "design matrix is rank deficient; dependent columns: "
            + ", ".join(self.dependent_columns)
        )


class StageError(TiacsError):
    """A pipeline stage failed; the original cause is chained."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
        if isinstance(cause, InputValidationError):
            self.exit_code = EXIT_VALIDATION
