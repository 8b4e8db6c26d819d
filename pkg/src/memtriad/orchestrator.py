"""End-to-end pipelines: encode turns into the stores, answer with budgeted
multi-channel retrieval.

Encoding annotates a turn, files it under its topic and clue words, and runs
each extracted fact/attribute through an op decision into the persona store.
Retrieval queries the enabled channels independently, renders them into
context lines in channel order, dedupes interactions across channels, trims
to the token budget, and (for ``answer``) hands the result to the responder.
"""

from __future__ import annotations

import logging
import string
from dataclasses import dataclass, field
from datetime import datetime
from typing import Optional, Sequence

from . import analyzer as analyzer_ops
from .analyzer import AnalyzerProvider
from .core import (
    Annotation,
    Interaction,
    MemoryOp,
    OpKind,
    Role,
    UserMemory,
    append_interaction,
    fallback_annotation,
)
from .embedding import EmbeddingProvider
from .episodic_memory import retrieve_episodic, index_clues, tokenize
from .errors import InvalidArgument, OpTargetMissing, ParseError, ProviderError
from .persona_memory import (
    PersonaEntry,
    apply_op,
    compact_attributes,
    retrieve_persona,
)
from .working_memory import index_topic, retrieve_working

logger = logging.getLogger(__name__)

CHANNEL_PERSONA = "persona"
CHANNEL_WORKING = "working"
CHANNEL_EPISODIC = "episodic"
ALL_CHANNELS = frozenset({CHANNEL_PERSONA, CHANNEL_WORKING, CHANNEL_EPISODIC})

# Persona first: the engine's thesis is profile-first answering, so persona
# lines survive trimming longest. The assembly-order alternative from the
# formulas is available as BudgetPolicy.paper_order().
DEFAULT_CHANNEL_ORDER = (CHANNEL_PERSONA, CHANNEL_WORKING, CHANNEL_EPISODIC)
PAPER_CHANNEL_ORDER = (CHANNEL_WORKING, CHANNEL_EPISODIC, CHANNEL_PERSONA)

MIN_BUDGET = 100
DEFAULT_BUDGET = 1500

_PUNCT = frozenset(string.punctuation)


def count_tokens(text: str) -> int:
    """Deterministic token count approximating model tokenizers.

    Split on whitespace; each piece contributes its leading punctuation run,
    its core, and its trailing punctuation run (each as one token when
    non-empty). Inner punctuation does not split: "don't" is one token.
    """
    count = 0
    for piece in text.split():
        start = 0
        end = len(piece)
        while start < end and piece[start] in _PUNCT:
            start += 1
        if start > 0:
            count += 1
        if start == end:
            continue
        while end > start and piece[end - 1] in _PUNCT:
            end -= 1
        if end < len(piece):
            count += 1
        if end > start:
            count += 1
    return count


@dataclass(frozen=True)
class BudgetPolicy:
    """Hard cap on assembled context size.

    Trimming drops whole lines from the end of the lowest-priority channel
    (the last one in ``channel_order``) first.
    """

    max_tokens: int = DEFAULT_BUDGET
    channel_order: tuple[str, ...] = DEFAULT_CHANNEL_ORDER

    def __post_init__(self) -> None:
        if self.max_tokens < MIN_BUDGET:
            raise InvalidArgument(f"budget must be >= {MIN_BUDGET} tokens")
        if set(self.channel_order) != ALL_CHANNELS or len(self.channel_order) != 3:
            raise InvalidArgument("channel_order must be a permutation of the three channels")

    @staticmethod
    def paper_order(max_tokens: int = DEFAULT_BUDGET) -> "BudgetPolicy":
        return BudgetPolicy(max_tokens=max_tokens, channel_order=PAPER_CHANNEL_ORDER)


@dataclass(frozen=True)
class Providers:
    analyzer: AnalyzerProvider
    embedder: EmbeddingProvider


@dataclass(frozen=True)
class EngineSettings:
    """Tunables for encode and retrieve; defaults match the shipped config."""

    k_topics: int = 3
    min_topic_similarity: float = 0.30
    k_facts: int = 10
    k_attributes: int = 10
    compaction_threshold: int = 20
    compaction_min_similarity: float = 0.60
    index_assistant_turns: bool = False
    retain_raw_log: bool = True

    def __post_init__(self) -> None:
        if min(self.k_topics, self.k_facts, self.k_attributes) < 1:
            raise InvalidArgument("all k settings must be >= 1")


@dataclass
class RetrievalBundle:
    """Per-channel results plus the merged, budget-trimmed context."""

    working_topics: list[str] = field(default_factory=list)
    working_ids: list[int] = field(default_factory=list)
    episodic_clue: Optional[str] = None
    episodic_ids: list[int] = field(default_factory=list)
    persona_entries: list[PersonaEntry] = field(default_factory=list)
    merged_context: str = ""
    token_count: int = 0
    channel_breakdown: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "working_topics": list(self.working_topics),
            "working_ids": list(self.working_ids),
            "episodic_clue": self.episodic_clue,
            "episodic_ids": list(self.episodic_ids),
            "persona_entries": [
                {"id": e.id, "kind": e.kind, "text": e.text} for e in self.persona_entries
            ],
            "merged_context": self.merged_context,
            "token_count": self.token_count,
            "channel_breakdown": dict(self.channel_breakdown),
        }


def encode_interaction(
    mem: UserMemory,
    text: str,
    role: Role,
    providers: Providers,
    settings: EngineSettings = EngineSettings(),
    timestamp: Optional[datetime] = None,
    session_id: Optional[str] = None,
) -> tuple[Interaction, Optional[Annotation]]:
    """Ingest one turn into the log and, for user turns, all three stores.

    Analyzer failures degrade gracefully: the turn is still logged and
    indexed under the fallback topic, the persona store is left untouched,
    and the failure is counted on the memory.
    """
    if not text.strip():
        raise InvalidArgument("interaction text must be non-empty")

    annotation: Optional[Annotation] = None
    should_index = role is Role.USER or settings.index_assistant_turns
    if should_index:
        try:
            annotation = analyzer_ops.annotate(providers.analyzer, text)
        except (ParseError, ProviderError) as exc:
            logger.warning("annotation failed for %s turn: %s", role.value, exc)
            annotation = fallback_annotation(text)
            mem.analysis_failures += 1

    stored_text = text
    if not settings.retain_raw_log:
        # privacy mode: the log keeps the distilled summary, never raw text
        stored_text = (annotation.summary if annotation else "").strip() or "(text withheld)"

    interaction = append_interaction(
        mem, role, stored_text, timestamp=timestamp, session_id=session_id
    )

    if not should_index:
        return interaction, None

    assert annotation is not None
    embed = providers.embedder.embed
    index_topic(mem.topic_index, annotation.topic, interaction.id, embed)
    index_clues(mem.clue_index, interaction.id, tokenize(interaction.text))

    if role is Role.USER:
        _apply_persona_updates(mem, interaction, annotation, providers, settings)
    return interaction, annotation


def _apply_persona_updates(
    mem: UserMemory,
    interaction: Interaction,
    annotation: Annotation,
    providers: Providers,
    settings: EngineSettings,
) -> None:
    store = mem.persona
    embed = providers.embedder.embed
    for fact in annotation.facts:
        existing = [(e.id, e.text) for e in store.facts]
        op = analyzer_ops.decide_fact_op(providers.analyzer, fact, existing)
        _apply_with_downgrade(store, "fact", op, fact, embed, interaction.id)
    for attribute in annotation.attributes:
        existing = [(e.id, e.text) for e in store.attributes]
        op = analyzer_ops.decide_attribute_op(providers.analyzer, attribute, existing)
        _apply_with_downgrade(store, "attribute", op, attribute, embed, interaction.id)
        if op.kind is not OpKind.IGNORE:
            store.pending_attribute_count += 1
    if (
        settings.compaction_threshold
        and store.pending_attribute_count >= settings.compaction_threshold
    ):
        run_compaction(mem, providers, settings)


def _apply_with_downgrade(store, kind, op, text, embed, interaction_id) -> None:
    try:
        apply_op(store, kind, op, text, embed, created_from=interaction_id)
    except OpTargetMissing:
        logger.warning("update target vanished; storing %s as new entry", kind)
        apply_op(
            store,
            kind,
            MemoryOp(kind=OpKind.ADD, payload=text),
            text,
            embed,
            created_from=interaction_id,
        )


def run_compaction(mem: UserMemory, providers: Providers, settings: EngineSettings = EngineSettings()):
    """Consolidate near-duplicate persona attributes (see persona_memory)."""
    return compact_attributes(
        mem.persona,
        merge_fn=lambda texts: analyzer_ops.merge_cluster(providers.analyzer, texts),
        embed_fn=providers.embedder.embed,
        min_similarity=settings.compaction_min_similarity,
    )


def retrieve(
    mem: UserMemory,
    query_text: str,
    providers: Providers,
    budget: Optional[BudgetPolicy] = None,
    channels: frozenset[str] | set[str] = ALL_CHANNELS,
    settings: EngineSettings = EngineSettings(),
) -> RetrievalBundle:
    """Query the enabled channels and assemble the trimmed context.

    Channels are independent: each channel's result equals what it would
    return when queried alone. The merge renders channels in the budget
    policy's order, dedupes interactions across channels (first channel
    wins), then drops whole lines from the lowest-priority channel until
    the context fits the budget.
    """
    if not query_text.strip():
        raise InvalidArgument("query text must be non-empty")
    unknown = set(channels) - ALL_CHANNELS
    if unknown:
        raise InvalidArgument(f"unknown channels: {sorted(unknown)}")
    if budget is None:
        budget = BudgetPolicy()

    bundle = RetrievalBundle()
    needs_vector = CHANNEL_PERSONA in channels or CHANNEL_WORKING in channels
    query_vector = providers.embedder.embed(query_text) if needs_vector else None

    if CHANNEL_WORKING in channels:
        topics, ids = retrieve_working(
            mem.topic_index,
            query_vector,
            k_topics=settings.k_topics,
            min_similarity=settings.min_topic_similarity,
        )
        bundle.working_topics = topics
        bundle.working_ids = sorted(ids)
    if CHANNEL_EPISODIC in channels:
        clue, ids = retrieve_episodic(mem.clue_index, tokenize(query_text))
        bundle.episodic_clue = clue
        bundle.episodic_ids = sorted(ids)
    if CHANNEL_PERSONA in channels:
        bundle.persona_entries = retrieve_persona(
            mem.persona,
            query_vector,
            k_facts=settings.k_facts,
            k_attributes=settings.k_attributes,
        )

    _assemble_context(mem, bundle, budget)
    return bundle


def _assemble_context(mem: UserMemory, bundle: RetrievalBundle, budget: BudgetPolicy) -> None:
    lines_by_channel: dict[str, list[str]] = {}
    seen_interactions: set[int] = set()
    for channel in budget.channel_order:
        if channel == CHANNEL_PERSONA:
            lines = [entry.render() for entry in bundle.persona_entries]
        else:
            ids = bundle.working_ids if channel == CHANNEL_WORKING else bundle.episodic_ids
            fresh = [i for i in ids if i not in seen_interactions]
            seen_interactions.update(fresh)
            lines = [mem.interaction_by_id(i).render() for i in fresh]
        lines_by_channel[channel] = lines

    counts = {ch: [count_tokens(line) for line in lines] for ch, lines in lines_by_channel.items()}
    total = sum(sum(c) for c in counts.values())
    for channel in reversed(budget.channel_order):
        while total > budget.max_tokens and lines_by_channel[channel]:
            lines_by_channel[channel].pop()
            total -= counts[channel].pop()
        if total <= budget.max_tokens:
            break

    ordered_lines: list[str] = []
    for channel in budget.channel_order:
        ordered_lines.extend(lines_by_channel[channel])
    bundle.merged_context = "\n".join(ordered_lines)
    bundle.token_count = count_tokens(bundle.merged_context)
    bundle.channel_breakdown = {ch: sum(counts[ch]) for ch in budget.channel_order}


class AnswerMode:
    CHAT = "chat"
    QA = "qa"


def answer(
    mem: UserMemory,
    query_text: str,
    providers: Providers,
    budget: Optional[BudgetPolicy] = None,
    channels: frozenset[str] | set[str] = ALL_CHANNELS,
    settings: EngineSettings = EngineSettings(),
    mode: str = AnswerMode.CHAT,
    timestamp: Optional[datetime] = None,
    session_id: Optional[str] = None,
) -> tuple[str, RetrievalBundle]:
    """Retrieve, respond, and (in chat mode) encode the query afterwards.

    Retrieval always runs before the query turn is indexed, so a turn can
    never retrieve itself. QA mode never encodes the query. A responder
    failure propagates with the bundle attached for inspection.
    """
    bundle = retrieve(mem, query_text, providers, budget, channels, settings)
    try:
        response = analyzer_ops.respond(providers.analyzer, bundle.merged_context, query_text)
    except ProviderError as exc:
        exc.bundle = bundle  # type: ignore[attr-defined]
        raise
    if mode == AnswerMode.CHAT:
        encode_interaction(
            mem,
            query_text,
            Role.USER,
            providers,
            settings=settings,
            timestamp=timestamp,
            session_id=session_id,
        )
    elif mode != AnswerMode.QA:
        raise InvalidArgument(f"unknown answer mode {mode!r}")
    return response, bundle
