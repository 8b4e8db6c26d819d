"""Shared exception types."""


class MemtriadError(Exception):
    """Base class for all engine errors."""


class InvalidArgument(MemtriadError, ValueError):
    """A caller violated an operation precondition."""


class DimensionMismatch(InvalidArgument):
    """Two vectors of different dimensionality were combined."""


class ProviderError(MemtriadError):
    """A remote provider call failed after its configured retries.

    Carries retry metadata so callers can decide whether to surface,
    degrade, or re-dispatch.
    """

    def __init__(self, message: str, *, attempts: int = 1, retryable: bool = False):
        super().__init__(message)
        self.attempts = attempts
        self.retryable = retryable


class ParseError(ProviderError):
    """A provider returned output that could not be parsed after re-prompts."""


class ScriptError(MemtriadError):
    """A scripted provider received an input it has no script entry for."""


class OpTargetMissing(MemtriadError):
    """An Update op referenced a persona entry id that does not exist."""

    def __init__(self, target_id: int):
        super().__init__(f"update target {target_id} not found")
        self.target_id = target_id


class UnknownUser(MemtriadError):
    """The service was asked about a user id it has never seen."""


class UserExists(MemtriadError):
    """Explicit user creation collided with an existing user."""


class SnapshotError(MemtriadError):
    """Base class for snapshot persistence failures."""


class SnapshotCorrupt(SnapshotError):
    """Snapshot file is unreadable or structurally invalid; nothing was loaded."""


class UnsupportedVersion(SnapshotError):
    """Snapshot file declares a format version this build cannot read."""
