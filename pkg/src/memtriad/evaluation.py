"""Conversation-QA evaluation harness.

Loads a conversation corpus (native JSON shape, with an adapter for the
public long-conversation benchmark release), drives the engine through
ingest-then-query per conversation, and scores answers with token-level F1
and unigram BLEU under the conventional QA normalization (lowercase, strip
punctuation and articles).
"""

from __future__ import annotations

import json
import logging
import math
import string
import time
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .core import Role, append_interaction, new_user_memory
from .embedding import Vector, top_k
from .errors import InvalidArgument, ProviderError
from .orchestrator import (
    ALL_CHANNELS,
    AnswerMode,
    BudgetPolicy,
    EngineSettings,
    Providers,
    answer,
    count_tokens,
    encode_interaction,
)
from . import analyzer as analyzer_ops

logger = logging.getLogger(__name__)

CATEGORY_NAMES = {1: "multi-hop", 2: "temporal", 3: "open-domain", 4: "single-hop"}
_NAME_TO_CATEGORY = {
    "multi-hop": 1,
    "multi hop": 1,
    "multihop": 1,
    "temporal": 2,
    "temporal reasoning": 2,
    "open-domain": 3,
    "open domain": 3,
    "open": 3,
    "single-hop": 4,
    "single hop": 4,
    "singlehop": 4,
}

MODE_OMEM = "omem"
MODE_DIRECT_RAG = "direct_rag"


@dataclass(frozen=True)
class Turn:
    speaker: str
    text: str
    timestamp: Optional[str] = None


@dataclass(frozen=True)
class Session:
    session_id: str
    turns: tuple[Turn, ...]


@dataclass(frozen=True)
class QAItem:
    question: str
    answer: str
    category: int
    evidence_turn_refs: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.category not in CATEGORY_NAMES:
            raise InvalidArgument(f"category must be one of {sorted(CATEGORY_NAMES)}")


@dataclass(frozen=True)
class Conversation:
    conversation_id: str
    sessions: tuple[Session, ...]
    qa_items: tuple[QAItem, ...]


@dataclass(frozen=True)
class EvalCorpus:
    conversations: tuple[Conversation, ...]


def category_from_label(label) -> int:
    """Resolve a category given either our number or a benchmark name string."""
    if isinstance(label, int):
        if label not in CATEGORY_NAMES:
            raise InvalidArgument(f"unknown category number {label}")
        return label
    key = str(label).strip().lower()
    if key in _NAME_TO_CATEGORY:
        return _NAME_TO_CATEGORY[key]
    raise InvalidArgument(f"unknown category name {label!r}")


def corpus_from_dict(doc: dict) -> EvalCorpus:
    conversations = []
    for conv in doc["conversations"]:
        sessions = tuple(
            Session(
                session_id=str(sess["session_id"]),
                turns=tuple(
                    Turn(
                        speaker=turn["speaker"],
                        text=turn["text"],
                        timestamp=turn.get("timestamp"),
                    )
                    for turn in sess["turns"]
                ),
            )
            for sess in conv["sessions"]
        )
        qa_items = tuple(
            QAItem(
                question=item["question"],
                answer=item["answer"],
                category=category_from_label(item["category"]),
                evidence_turn_refs=tuple(item.get("evidence_turn_refs", ())),
            )
            for item in conv["qa_items"]
        )
        conversations.append(
            Conversation(
                conversation_id=str(conv["conversation_id"]),
                sessions=sessions,
                qa_items=qa_items,
            )
        )
    return EvalCorpus(conversations=tuple(conversations))


def load_corpus(path: str | Path) -> EvalCorpus:
    with open(path, "r", encoding="utf-8") as fh:
        return corpus_from_dict(json.load(fh))


def adapt_benchmark_release(samples: list[dict]) -> EvalCorpus:
    """Map the public long-conversation benchmark schema onto EvalCorpus.

    Categories are matched by name when the QA item carries one (numbering
    drifts across releases); numeric-only items are taken as already using
    our numbering.
    """
    conversations = []
    for i, sample in enumerate(samples):
        conv = sample["conversation"]
        sessions = []
        index = 1
        while f"session_{index}" in conv:
            turns = tuple(
                Turn(
                    speaker=t.get("speaker", "user"),
                    text=t.get("clean_text") or t.get("text", ""),
                    timestamp=conv.get(f"session_{index}_date_time"),
                )
                for t in conv[f"session_{index}"]
                if (t.get("clean_text") or t.get("text", "")).strip()
            )
            sessions.append(Session(session_id=f"session_{index}", turns=turns))
            index += 1
        qa_items = tuple(
            QAItem(
                question=item["question"],
                answer=str(item.get("answer", "")),
                category=category_from_label(
                    item.get("category_name", item.get("category"))
                ),
                evidence_turn_refs=tuple(item.get("evidence", ())),
            )
            for item in sample.get("qa", ())
        )
        conversations.append(
            Conversation(
                conversation_id=str(sample.get("sample_id", i)),
                sessions=tuple(sessions),
                qa_items=qa_items,
            )
        )
    return EvalCorpus(conversations=tuple(conversations))


# ---------------------------------------------------------------------------
# Metrics.

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_ARTICLES = frozenset({"a", "an", "the"})


def normalize_answer(text: str) -> list[str]:
    """QA-standard normalization: lowercase, strip punctuation and articles."""
    cleaned = text.lower().translate(_PUNCT_TABLE)
    return [token for token in cleaned.split() if token not in _ARTICLES]


def token_f1(prediction: str, reference: str) -> float:
    """Harmonic mean of precision/recall over multiset token overlap."""
    pred = normalize_answer(prediction)
    ref = normalize_answer(reference)
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    common = sum((Counter(pred) & Counter(ref)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred)
    recall = common / len(ref)
    return 2 * precision * recall / (precision + recall)


def bleu1(prediction: str, reference: str) -> float:
    """Clipped unigram precision with brevity penalty, no smoothing."""
    pred = normalize_answer(prediction)
    ref = normalize_answer(reference)
    if not pred:
        return 0.0
    clipped = sum((Counter(pred) & Counter(ref)).values())
    precision = clipped / len(pred)
    if precision == 0.0:
        return 0.0
    if len(pred) < len(ref):
        brevity = math.exp(1 - len(ref) / len(pred))
    else:
        brevity = 1.0
    return precision * brevity


# ---------------------------------------------------------------------------
# Harness.


@dataclass
class EvalReport:
    mode: str
    channels: list[str]
    budget_max_tokens: int
    analyzer_provider: str
    embedding_provider: str
    question_count: int = 0
    failures: int = 0
    per_category: dict[str, dict] = field(default_factory=dict)
    average_f1_pct: float = 0.0
    average_bleu1_pct: float = 0.0
    total_tokens: int = 0
    mean_tokens: float = 0.0
    mean_latency_ms: float = 0.0

    def canonical_dict(self) -> dict:
        """Deterministic report content; excludes wall-clock timings."""
        return {
            "mode": self.mode,
            "channels": list(self.channels),
            "budget_max_tokens": self.budget_max_tokens,
            "analyzer_provider": self.analyzer_provider,
            "embedding_provider": self.embedding_provider,
            "question_count": self.question_count,
            "failures": self.failures,
            "per_category": {k: dict(v) for k, v in sorted(self.per_category.items())},
            "average_f1_pct": self.average_f1_pct,
            "average_bleu1_pct": self.average_bleu1_pct,
            "total_tokens": self.total_tokens,
            "mean_tokens": self.mean_tokens,
        }

    def to_dict(self) -> dict:
        doc = self.canonical_dict()
        doc["timings"] = {"mean_latency_ms": round(self.mean_latency_ms, 3)}
        return doc

    def format_table(self) -> str:
        rows = [
            f"{'category':<14} {'F1 %':>8} {'BLEU-1 %':>10} {'questions':>10}",
            "-" * 46,
        ]
        for name, scores in sorted(self.per_category.items()):
            rows.append(
                f"{name:<14} {scores['f1_pct']:>8.2f} {scores['bleu1_pct']:>10.2f}"
                f" {scores['count']:>10d}"
            )
        rows.append("-" * 46)
        rows.append(
            f"{'average':<14} {self.average_f1_pct:>8.2f} {self.average_bleu1_pct:>10.2f}"
            f" {self.question_count:>10d}"
        )
        rows.append(
            f"mean tokens/answer: {self.mean_tokens:.1f}   "
            f"mean latency: {self.mean_latency_ms:.1f} ms   failures: {self.failures}"
        )
        return "\n".join(rows)


def _parse_timestamp(raw: Optional[str], fallback_minute: int) -> datetime:
    if raw:
        try:
            parsed = datetime.fromisoformat(raw)
            if parsed.tzinfo is None:
                parsed = parsed.replace(tzinfo=timezone.utc)
            return parsed
        except ValueError:
            pass
    return datetime(2000, 1, 1, tzinfo=timezone.utc).replace(
        minute=fallback_minute % 60, hour=(fallback_minute // 60) % 24
    )


def run_eval(
    corpus: EvalCorpus,
    providers: Providers,
    mode: str = MODE_OMEM,
    channels: frozenset[str] | set[str] = ALL_CHANNELS,
    budget: Optional[BudgetPolicy] = None,
    settings: EngineSettings = EngineSettings(),
    direct_rag_k: int = 20,
) -> EvalReport:
    """Fresh memory per conversation; ingest every turn, then answer the QA
    items in QA mode (questions are never indexed).

    Direct-retrieval mode skips all distillation: raw turn lines are embedded
    at ingest and questions retrieve the top-k raw lines, agent turns
    included.
    """
    if mode not in (MODE_OMEM, MODE_DIRECT_RAG):
        raise InvalidArgument(f"unknown eval mode {mode!r}")
    if budget is None:
        budget = BudgetPolicy()
    report = EvalReport(
        mode=mode,
        channels=sorted(channels),
        budget_max_tokens=budget.max_tokens,
        analyzer_provider=providers.analyzer.provider_id,
        embedding_provider=providers.embedder.provider_id,
    )
    sums: dict[int, dict[str, float]] = {}
    f1_sum = bleu_sum = 0.0
    token_sum = 0
    latency_sum = 0.0

    for conversation in corpus.conversations:
        mem = new_user_memory(f"eval-{conversation.conversation_id}")
        raw_vectors: list[tuple[int, Vector]] = []
        minute = 0
        for session in conversation.sessions:
            for turn in session.turns:
                line = f"{turn.speaker}: {turn.text}"
                stamp = _parse_timestamp(turn.timestamp, minute)
                minute += 1
                if mode == MODE_OMEM:
                    encode_interaction(
                        mem,
                        line,
                        Role.USER,
                        providers,
                        settings=settings,
                        timestamp=stamp,
                        session_id=session.session_id,
                    )
                else:
                    interaction = append_interaction(
                        mem, Role.USER, line, timestamp=stamp, session_id=session.session_id
                    )
                    raw_vectors.append((interaction.id, providers.embedder.embed(line)))

        for item in conversation.qa_items:
            start = time.perf_counter()
            try:
                if mode == MODE_OMEM:
                    prediction, bundle = answer(
                        mem,
                        item.question,
                        providers,
                        budget=budget,
                        channels=channels,
                        settings=settings,
                        mode=AnswerMode.QA,
                    )
                    tokens = bundle.token_count
                else:
                    prediction, _, tokens = _direct_rag_answer(
                        mem, item.question, providers, raw_vectors, budget, direct_rag_k
                    )
                failed = False
            except ProviderError as exc:
                logger.warning("provider failure on %r: %s", item.question, exc)
                prediction = ""
                tokens = 0
                failed = True
            elapsed_ms = (time.perf_counter() - start) * 1000.0

            f1 = token_f1(prediction, item.answer) if not failed else 0.0
            b1 = bleu1(prediction, item.answer) if not failed else 0.0
            bucket = sums.setdefault(item.category, {"f1": 0.0, "bleu1": 0.0, "count": 0})
            bucket["f1"] += f1
            bucket["bleu1"] += b1
            bucket["count"] += 1
            f1_sum += f1
            bleu_sum += b1
            token_sum += tokens
            latency_sum += elapsed_ms
            report.question_count += 1
            report.failures += int(failed)

    for category, bucket in sums.items():
        count = int(bucket["count"])
        report.per_category[CATEGORY_NAMES[category]] = {
            "f1_pct": round(100.0 * bucket["f1"] / count, 2),
            "bleu1_pct": round(100.0 * bucket["bleu1"] / count, 2),
            "count": count,
        }
    if report.question_count:
        report.average_f1_pct = round(100.0 * f1_sum / report.question_count, 2)
        report.average_bleu1_pct = round(100.0 * bleu_sum / report.question_count, 2)
        report.mean_tokens = round(token_sum / report.question_count, 2)
        report.mean_latency_ms = latency_sum / report.question_count
    report.total_tokens = token_sum
    return report


def direct_rag_retrieve(
    mem,
    query_text: str,
    providers: Providers,
    raw_vectors: list[tuple[int, Vector]],
    budget: BudgetPolicy,
    k: int,
) -> tuple[list[int], str, int]:
    """Top-k raw turns by embedding similarity, trimmed to the budget.

    Returns (retrieved ids in rank order, context, token count).
    """
    query_vector = providers.embedder.embed(query_text)
    ranked = top_k(raw_vectors, query_vector, k)
    ids = [int(item.key) for item in ranked]
    lines = [mem.interaction_by_id(i).render() for i in ids]
    line_tokens = [count_tokens(line) for line in lines]
    total = sum(line_tokens)
    while total > budget.max_tokens and lines:
        lines.pop()
        total -= line_tokens.pop()
    context = "\n".join(lines)
    return ids, context, count_tokens(context)


def _direct_rag_answer(
    mem, question: str, providers: Providers, raw_vectors, budget: BudgetPolicy, k: int
) -> tuple[str, list[int], int]:
    ids, context, tokens = direct_rag_retrieve(mem, question, providers, raw_vectors, budget, k)
    prediction = analyzer_ops.respond(providers.analyzer, context, question)
    return prediction, ids, tokens
