"""Domain types and the per-user memory container.

Everything else in the engine operates on the types defined here: an
append-only interaction log, the analyzer annotation schema, the
Add/Ignore/Update memory op, and ``UserMemory`` which bundles the three
stores (topic index, clue index, persona) for one user.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Optional

from .errors import InvalidArgument


class Role(str, Enum):
    USER = "user"
    ASSISTANT = "assistant"


class Attitude(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    MIXED = "mixed"
    NONE = "none"


class OpKind(str, Enum):
    ADD = "add"
    IGNORE = "ignore"
    UPDATE = "update"


@dataclass(frozen=True)
class Interaction:
    """One logged turn. Ids are per-user integers, contiguous from 1."""

    id: int
    user_id: str
    role: Role
    text: str
    timestamp: datetime
    session_id: Optional[str] = None

    def render(self) -> str:
        """Context line format; locked by golden fixtures."""
        ts = self.timestamp.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        return f"[#{self.id} {ts} {self.role.value}] {self.text}"


@dataclass(frozen=True)
class Annotation:
    """Structured analyzer output for one interaction.

    ``topic`` is always non-empty; degenerate inputs fall back to "general".
    ``facts`` and ``attributes`` are always lists, possibly empty.
    """

    topic: str
    attitude: Attitude = Attitude.NONE
    reason: str = ""
    facts: list[str] = field(default_factory=list)
    attributes: list[str] = field(default_factory=list)
    summary: str = ""
    rationale: str = ""

    def __post_init__(self) -> None:
        if not self.topic.strip():
            raise InvalidArgument("annotation topic must be non-empty")


FALLBACK_TOPIC = "general"


def fallback_annotation(text: str) -> Annotation:
    """Degraded annotation used when analysis fails: indexable, no persona ops."""
    return Annotation(topic=FALLBACK_TOPIC, summary=text.strip(), rationale="analysis unavailable")


@dataclass(frozen=True)
class MemoryOp:
    """A persona-store transition: add a new entry, ignore, or update one in place."""

    kind: OpKind
    target_id: Optional[int] = None
    payload: str = ""

    def __post_init__(self) -> None:
        if self.kind is OpKind.UPDATE and self.target_id is None:
            raise InvalidArgument("update op requires a target_id")


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


@dataclass
class UserMemory:
    """All memory state for one user.

    The interaction log is append-only; indices and persona entries refer to
    interactions by id. Mutations must be serialized by the owner (one writer
    per user); see the service layer for the locking discipline.
    """

    user_id: str
    topic_index: "TopicIndex"
    clue_index: "ClueIndex"
    persona: "PersonaStore"
    interactions: list[Interaction] = field(default_factory=list)
    ingested_count: int = 0
    analysis_failures: int = 0

    @property
    def pending_attribute_count(self) -> int:
        return self.persona.pending_attribute_count

    def interaction_by_id(self, interaction_id: int) -> Interaction:
        # ids are contiguous 1..n, so the log doubles as the lookup table
        if not 1 <= interaction_id <= len(self.interactions):
            raise InvalidArgument(f"no interaction with id {interaction_id}")
        return self.interactions[interaction_id - 1]


def new_user_memory(user_id: str) -> UserMemory:
    """Fresh, empty memory for ``user_id``. Uniqueness is the service layer's job."""
    from .episodic_memory import ClueIndex
    from .persona_memory import PersonaStore
    from .working_memory import TopicIndex

    if not user_id:
        raise InvalidArgument("user_id must be non-empty")
    return UserMemory(
        user_id=user_id,
        topic_index=TopicIndex(),
        clue_index=ClueIndex(),
        persona=PersonaStore(),
    )


def append_interaction(
    mem: UserMemory,
    role: Role,
    text: str,
    timestamp: Optional[datetime] = None,
    session_id: Optional[str] = None,
) -> Interaction:
    """Append one turn to the log and return it with the next id."""
    cleaned = text.strip()
    if not cleaned:
        raise InvalidArgument("interaction text must be non-empty")
    if timestamp is None:
        timestamp = utc_now()
    elif timestamp.tzinfo is None:
        timestamp = timestamp.replace(tzinfo=timezone.utc)
    interaction = Interaction(
        id=len(mem.interactions) + 1,
        user_id=mem.user_id,
        role=role,
        text=cleaned,
        timestamp=timestamp,
        session_id=session_id,
    )
    mem.interactions.append(interaction)
    mem.ingested_count += 1
    return interaction
