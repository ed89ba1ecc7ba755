from __future__ import annotations

# Not frozen: contextlib assigns __traceback__ on exceptions leaving a
# @contextmanager block, which a frozen dataclass refuses.

from dataclasses import dataclass
from typing import Any, Optional


@dataclass(eq=False)
class GhvitError(Exception):
    message: str
    details: Optional[Any] = None

    def __str__(self) -> str:
        return self.message


@dataclass(eq=False)
class ShapeError(GhvitError):
    pass


@dataclass(eq=False)
class NonFiniteError(GhvitError):
    pass


@dataclass(eq=False)
class ConfigError(GhvitError):
    pass


@dataclass(eq=False)
class DataFormatError(GhvitError):
    offset: Optional[int] = None

    def __str__(self) -> str:
        if self.offset is None:
            return self.message
        return f"{self.message} (at byte offset {self.offset})"


@dataclass(eq=False)
class CheckpointError(GhvitError):
    pass


@dataclass(eq=False)
class TrainingDiverged(GhvitError):
    batch_index: int = -1


@dataclass(eq=False)
class GradcheckFailed(GhvitError):
    pass
