"""Topic -> interactions index: topical continuity channel.

Topics come from the analyzer as free text; keys are normalized so casing
and stray whitespace do not split one topic into several. Each topic gets
one embedding, computed when the topic is first seen and reused for every
later query.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable

from .embedding import Vector, top_k
from .errors import InvalidArgument

_WHITESPACE_RE = re.compile(r"\s+")

DEFAULT_K_TOPICS = 3
DEFAULT_MIN_SIMILARITY = 0.30


def normalize_topic(topic: str) -> str:
    return _WHITESPACE_RE.sub(" ", topic.strip().lower())


@dataclass
class TopicIndex:
    """Invariant: ``entries`` and ``topic_vectors`` always hold the same keys."""

    entries: dict[str, set[int]] = field(default_factory=dict)
    topic_vectors: dict[str, Vector] = field(default_factory=dict)

    def topic_count(self) -> int:
        return len(self.entries)


def index_topic(
    index: TopicIndex,
    topic: str,
    interaction_id: int,
    embed_fn: Callable[[str], Vector],
) -> TopicIndex:
    """File ``interaction_id`` under ``topic``, embedding new topics once."""
    key = normalize_topic(topic)
    if not key:
        raise InvalidArgument("topic must be non-empty")
    if key not in index.entries:
        index.entries[key] = set()
        index.topic_vectors[key] = embed_fn(key)
    index.entries[key].add(interaction_id)
    return index


def retrieve_working(
    index: TopicIndex,
    query_vector: Vector,
    k_topics: int = DEFAULT_K_TOPICS,
    min_similarity: float = DEFAULT_MIN_SIMILARITY,
) -> tuple[list[str], set[int]]:
    """Top-k topics by similarity to the query, and the union of their ids.

    Topics scoring below ``min_similarity`` are dropped so a small store's
    least-bad topic cannot flood the context with unrelated interactions.
    """
    if k_topics < 1:
        raise InvalidArgument("k_topics must be >= 1")
    if not index.entries:
        return [], set()
    candidates = [(topic, vec) for topic, vec in index.topic_vectors.items()]
    ranked = top_k(candidates, query_vector, k_topics)
    topics = [str(item.key) for item in ranked if item.score >= min_similarity]
    ids: set[int] = set()
    for topic in topics:
        ids |= index.entries[topic]
    return topics, ids
