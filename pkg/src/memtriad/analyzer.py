"""Language-model interface: annotation, op decisions, merges, responses.

Three provider tiers implement the same surface:

* ``ScriptedAnalyzer`` replays an explicit table and raises on anything
  unscripted; golden tests use it.
* ``RuleBasedAnalyzer`` pins deterministic heuristics (normalization,
  duplicate and contradiction rules) so every downstream behavior is
  testable without a model.
* ``RemoteAnalyzer`` speaks an HTTP chat-completion protocol with bounded
  re-prompting for malformed output.

The free functions at the bottom are the operation surface the rest of the
engine calls; they add the provider-independent contract pieces (input
validation, singleton merges, unknown-update downgrade, empty-context
marker).
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Protocol, Sequence

from .core import Annotation, Attitude, MemoryOp, OpKind
from .episodic_memory import STOPWORDS
from .errors import InvalidArgument, ParseError, ProviderError, ScriptError

logger = logging.getLogger(__name__)

EMPTY_CONTEXT_MARKER = "(no memory retrieved)"


def load_prompt(name: str) -> str:
    """Prompt template from the package's data directory."""
    return resources.files("memtriad.data.prompts").joinpath(f"{name}.txt").read_text("utf-8")


# ---------------------------------------------------------------------------
# Normalization used by the rule-based duplicate/contradiction heuristics.

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# boilerplate subjects in analyzer output ("user hates stress")
_SUBJECT_TOKENS = frozenset({"user", "users"})


def _stem(word: str) -> str:
    if word.endswith("sses"):
        word = word[:-2]
    elif word.endswith("ies") and len(word) > 3:
        word = word[:-3] + "y"
    elif word.endswith("ss"):
        pass
    elif word.endswith("s") and len(word) > 3:
        word = word[:-1]
    stripped = False
    if word.endswith("ing") and len(word) > 5:
        word = word[:-3]
        stripped = True
    elif word.endswith("ed") and len(word) > 4:
        word = word[:-2]
        stripped = True
    if stripped and len(word) >= 3 and word[-1] == word[-2] and word[-1] not in "aeiou":
        word = word[:-1]
    return word


def normalize_phrase(text: str) -> frozenset[str]:
    """Stemmed content-token set; the rule-based notion of 'same statement'."""
    out = set()
    for token in _TOKEN_RE.findall(text.lower()):
        if len(token) < 2 or token in STOPWORDS or token in _SUBJECT_TOKENS:
            continue
        out.add(_stem(token))
    return frozenset(out)


# Contradiction cues in stem space; any pair firing in either direction with
# shared remaining content marks an update of the older statement.
ANTONYM_PAIRS: frozenset[tuple[str, str]] = frozenset(
    {
        ("stop", "start"),
        ("stop", "restart"),
        ("stop", "return"),
        ("stop", "resume"),
        ("stop", "rejoin"),
        ("quit", "start"),
        ("quit", "return"),
        ("quit", "resume"),
        ("quit", "rejoin"),
        ("leave", "return"),
        ("leave", "rejoin"),
        ("end", "start"),
        ("end", "resume"),
        ("abandon", "return"),
        ("abandon", "resume"),
        ("hate", "love"),
        ("hate", "like"),
        ("hate", "enjoy"),
        ("dislike", "like"),
        ("dislike", "love"),
    }
)

_ANTONYMS_BIDIRECTIONAL = frozenset(
    pair for a, b in ANTONYM_PAIRS for pair in ((a, b), (b, a))
)


def _decide_by_rules(candidate: str, existing: Sequence[tuple[int, str]]) -> MemoryOp:
    cand = normalize_phrase(candidate)
    for entry_id, text in existing:
        if normalize_phrase(text) == cand:
            return MemoryOp(kind=OpKind.IGNORE, payload=candidate)
    for entry_id, text in existing:
        tokens = normalize_phrase(text)
        for a, b in _ANTONYMS_BIDIRECTIONAL:
            if a in cand and b in tokens and (cand - {a}) & (tokens - {b}):
                return MemoryOp(kind=OpKind.UPDATE, target_id=entry_id, payload=candidate)
    return MemoryOp(kind=OpKind.ADD, payload=candidate)


def longest_member(members: Sequence[str]) -> str:
    """Deterministic merge fallback: longest text, ties to the lexicographically smaller."""
    if not members:
        raise InvalidArgument("cannot merge an empty cluster")
    return sorted(members, key=lambda m: (-len(m), m))[0]


# ---------------------------------------------------------------------------
# Annotation parsing (shared by remote provider and tests).

_ATTITUDES = {
    "positive": Attitude.POSITIVE,
    "postive": Attitude.POSITIVE,  # schema typo tolerated
    "negative": Attitude.NEGATIVE,
    "mixed": Attitude.MIXED,
}


def _first_string(value) -> str:
    if isinstance(value, list):
        for item in value:
            if isinstance(item, str) and item.strip():
                return item.strip()
        return ""
    if isinstance(value, str):
        return value.strip()
    return ""


def _string_list(value) -> list[str]:
    if isinstance(value, list):
        return [item.strip() for item in value if isinstance(item, str) and item.strip()]
    if isinstance(value, str) and value.strip():
        return [value.strip()]
    return []


def _extract_json_object(text: str) -> dict:
    start = text.find("{")
    if start < 0:
        raise ParseError("no JSON object in model output")
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                try:
                    return json.loads(text[start : i + 1])
                except json.JSONDecodeError as exc:
                    raise ParseError(f"malformed JSON in model output: {exc}") from exc
    raise ParseError("unbalanced JSON object in model output")


def parse_annotation(raw: str) -> Annotation:
    """Parse model output against the tagging schema (text/tags/summary/rationale)."""
    doc = _extract_json_object(raw)
    tags = doc.get("tags")
    if not isinstance(tags, dict):
        raise ParseError("annotation output missing 'tags' object")
    topic = _first_string(tags.get("topic")) or "general"
    attitude = _ATTITUDES.get(_first_string(tags.get("attitude")).lower(), Attitude.NONE)
    return Annotation(
        topic=topic,
        attitude=attitude,
        reason=_first_string(tags.get("reason")),
        facts=_string_list(tags.get("facts")),
        attributes=_string_list(tags.get("attributes")),
        summary=_first_string(doc.get("summary")),
        rationale=_first_string(doc.get("rationale")),
    )


# ---------------------------------------------------------------------------
# Providers.


class AnalyzerProvider(Protocol):
    provider_id: str

    def annotate(self, text: str) -> Annotation: ...

    def decide_fact_op(self, event: str, existing: Sequence[tuple[int, str]]) -> MemoryOp: ...

    def decide_attribute_op(
        self, attribute: str, existing: Sequence[tuple[int, str]]
    ) -> MemoryOp: ...

    def merge_cluster(self, members: Sequence[str]) -> str: ...

    def respond(self, context: str, query: str) -> str: ...


# Sentiment cues for the rule-based annotator. Matched on surface tokens.
POSITIVE_WORDS = frozenset(
    """love loves loved like likes liked enjoy enjoys enjoyed help helps helped
    great happy glad excited exciting good wonderful amazing favorite fun
    overcome better best improved improving""".split()
)
NEGATIVE_WORDS = frozenset(
    """hate hates hated stop stopped quit stress stressed stressful anxiety
    anxious bad sad angry worried worry afraid dislike dislikes terrible awful
    injury hurt pain worse worst""".split()
)


class RuleBasedAnalyzer:
    """Deterministic heuristics; never calls out, never fails.

    Annotation: topic is the first two content words ("general" when there
    are fewer than two); attitude comes from small sentiment lexicons; the
    whole trimmed message doubles as its single fact; an attitude yields one
    synthesized attribute. Op decisions use normalized-set equality for
    duplicates and the antonym table for contradictions.
    """

    provider_id = "rule-based"

    def annotate(self, text: str) -> Annotation:
        cleaned = text.strip()
        tokens = [
            t for t in _TOKEN_RE.findall(cleaned.lower()) if len(t) >= 2 and t not in STOPWORDS
        ]
        if len(tokens) < 2:
            return Annotation(
                topic="general",
                summary=cleaned,
                rationale="degenerate input: fewer than two content words",
            )
        positive = any(t in POSITIVE_WORDS for t in tokens)
        negative = any(t in NEGATIVE_WORDS for t in tokens)
        if positive and negative:
            attitude = Attitude.MIXED
        elif positive:
            attitude = Attitude.POSITIVE
        elif negative:
            attitude = Attitude.NEGATIVE
        else:
            attitude = Attitude.NONE
        topic = " ".join(tokens[:2])
        attributes = []
        if attitude is not Attitude.NONE:
            attributes = [f"user feels {attitude.value} about {topic}"]
        return Annotation(
            topic=topic,
            attitude=attitude,
            reason=f"keyword sentiment: {attitude.value}",
            facts=[cleaned],
            attributes=attributes,
            summary=cleaned,
            rationale="rule-based keyword annotation",
        )

    def decide_fact_op(self, event: str, existing: Sequence[tuple[int, str]]) -> MemoryOp:
        return _decide_by_rules(event, existing)

    def decide_attribute_op(
        self, attribute: str, existing: Sequence[tuple[int, str]]
    ) -> MemoryOp:
        return _decide_by_rules(attribute, existing)

    def merge_cluster(self, members: Sequence[str]) -> str:
        return longest_member(members)

    def respond(self, context: str, query: str) -> str:
        if context == EMPTY_CONTEXT_MARKER:
            return "I have no stored memory that helps with that yet."
        first_line = context.splitlines()[0]
        return re.sub(r"^\[[^\]]*\]\s*", "", first_line)


@dataclass
class ScriptedAnalyzer:
    """Replays explicit tables; any unscripted input raises ScriptError.

    Response scripts are keyed by ``(context_key, query)`` where the context
    key is the short SHA-256 of the rendered context; ``"*"`` matches any
    context for fixtures that only care about the query.
    """

    annotations: dict[str, Annotation] = field(default_factory=dict)
    fact_ops: dict[tuple[str, tuple[str, ...]], MemoryOp] = field(default_factory=dict)
    attribute_ops: dict[tuple[str, tuple[str, ...]], MemoryOp] = field(default_factory=dict)
    merges: dict[tuple[str, ...], str] = field(default_factory=dict)
    responses: dict[tuple[str, str], str] = field(default_factory=dict)
    provider_id: str = "scripted"

    @staticmethod
    def context_key(context: str) -> str:
        return hashlib.sha256(context.encode("utf-8")).hexdigest()[:12]

    def annotate(self, text: str) -> Annotation:
        try:
            return self.annotations[text.strip()]
        except KeyError:
            raise ScriptError(f"no scripted annotation for {text.strip()[:80]!r}") from None

    def _lookup_op(
        self,
        table: dict[tuple[str, tuple[str, ...]], MemoryOp],
        candidate: str,
        existing: Sequence[tuple[int, str]],
        label: str,
    ) -> MemoryOp:
        key = (candidate, tuple(text for _, text in existing))
        try:
            return table[key]
        except KeyError:
            raise ScriptError(f"no scripted {label} op for {key!r}") from None

    def decide_fact_op(self, event: str, existing: Sequence[tuple[int, str]]) -> MemoryOp:
        return self._lookup_op(self.fact_ops, event, existing, "fact")

    def decide_attribute_op(
        self, attribute: str, existing: Sequence[tuple[int, str]]
    ) -> MemoryOp:
        return self._lookup_op(self.attribute_ops, attribute, existing, "attribute")

    def merge_cluster(self, members: Sequence[str]) -> str:
        try:
            return self.merges[tuple(members)]
        except KeyError:
            raise ScriptError(f"no scripted merge for {tuple(members)!r}") from None

    def respond(self, context: str, query: str) -> str:
        key = (self.context_key(context), query)
        if key in self.responses:
            return self.responses[key]
        wildcard = ("*", query)
        if wildcard in self.responses:
            return self.responses[wildcard]
        raise ScriptError(f"no scripted response for {key!r}")


class RemoteAnalyzer:
    """Chat-completion client: one user message per call, temperature 0.

    Malformed structured output is re-prompted up to ``reprompts`` times
    before a ParseError escapes; transport failures retry with exponential
    backoff; a semaphore caps concurrent in-flight requests.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        token: str | None = None,
        timeout_s: float = 60.0,
        retries: int = 2,
        backoff_s: float = 0.5,
        reprompts: int = 2,
        max_concurrency: int = 4,
    ):
        self.endpoint = endpoint
        self.model = model
        self.token = token
        self.timeout_s = timeout_s
        self.retries = retries
        self.backoff_s = backoff_s
        self.reprompts = reprompts
        self.provider_id = f"remote:{model}@{endpoint}"
        self._semaphore = threading.BoundedSemaphore(max_concurrency)
        self._annotate_template = load_prompt("understand_user_experience")
        self._op_template = load_prompt("memory_op_decision")
        self._merge_template = load_prompt("attribute_merge")
        self._respond_template = load_prompt("chat_response")

    def _chat(self, prompt: str) -> str:
        import httpx

        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                with self._semaphore:
                    response = httpx.post(
                        self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
                    )
                response.raise_for_status()
                content = response.json()["choices"][0]["message"]["content"]
                if not isinstance(content, str):
                    raise KeyError("content")
                return content
            except Exception as exc:
                last_error = exc
                if attempt < self.retries:
                    time.sleep(self.backoff_s * (2**attempt))
        raise ProviderError(
            f"chat request failed: {last_error}", attempts=self.retries + 1, retryable=True
        )

    def _chat_structured(self, prompt: str, parse):
        nudge = (
            "\n\nYour previous reply was not valid JSON matching the required"
            " schema. Output only the JSON object."
        )
        attempt_prompt = prompt
        for attempt in range(self.reprompts + 1):
            raw = self._chat(attempt_prompt)
            try:
                return parse(raw)
            except ParseError as exc:
                if attempt == self.reprompts:
                    raise ParseError(
                        f"unparseable model output after {self.reprompts} re-prompts: {exc}",
                        attempts=attempt + 1,
                    ) from exc
                attempt_prompt = prompt + nudge

    def annotate(self, text: str) -> Annotation:
        return self._chat_structured(
            self._annotate_template.format(message=text.strip()), parse_annotation
        )

    def _decide(self, kind: str, candidate: str, existing: Sequence[tuple[int, str]]) -> MemoryOp:
        listing = "\n".join(f"{i}: {t}" for i, t in existing) or "(none)"
        prompt = self._op_template.format(kind=kind, candidate=candidate, existing=listing)

        def parse(raw: str) -> MemoryOp:
            doc = _extract_json_object(raw)
            op = str(doc.get("op", "")).strip().lower()
            if op == "add":
                return MemoryOp(kind=OpKind.ADD, payload=candidate)
            if op == "ignore":
                return MemoryOp(kind=OpKind.IGNORE, payload=candidate)
            if op == "update":
                target = doc.get("target")
                if not isinstance(target, int):
                    raise ParseError("update op without integer target")
                return MemoryOp(kind=OpKind.UPDATE, target_id=target, payload=candidate)
            raise ParseError(f"unknown op {op!r}")

        return self._chat_structured(prompt, parse)

    def decide_fact_op(self, event: str, existing: Sequence[tuple[int, str]]) -> MemoryOp:
        return self._decide("fact event", event, existing)

    def decide_attribute_op(
        self, attribute: str, existing: Sequence[tuple[int, str]]
    ) -> MemoryOp:
        return self._decide("attribute", attribute, existing)

    def merge_cluster(self, members: Sequence[str]) -> str:
        listing = "\n".join(f"- {m}" for m in members)
        merged = self._chat(self._merge_template.format(members=listing)).strip()
        if not merged:
            raise ProviderError("merge returned empty text")
        return merged

    def respond(self, context: str, query: str) -> str:
        reply = self._chat(
            self._respond_template.format(context=context, query=query)
        ).strip()
        if not reply:
            raise ProviderError("respond returned empty text")
        return reply


# ---------------------------------------------------------------------------
# Operation surface. These wrappers own the provider-independent parts of
# each contract.


def annotate(provider: AnalyzerProvider, interaction_text: str) -> Annotation:
    if not interaction_text.strip():
        raise InvalidArgument("cannot annotate empty text")
    return provider.annotate(interaction_text)


def _checked_decide(
    decide, candidate: str, existing: Sequence[tuple[int, str]], label: str
) -> MemoryOp:
    if not candidate.strip():
        raise InvalidArgument(f"cannot decide op for empty {label}")
    op = decide(candidate, existing)
    if op.kind is OpKind.UPDATE and op.target_id not in {i for i, _ in existing}:
        logger.warning(
            "%s op targeted unknown id %s; downgrading to add", label, op.target_id
        )
        return MemoryOp(kind=OpKind.ADD, payload=op.payload or candidate)
    return op


def decide_fact_op(
    provider: AnalyzerProvider, event: str, existing: Sequence[tuple[int, str]]
) -> MemoryOp:
    return _checked_decide(provider.decide_fact_op, event, existing, "fact")


def decide_attribute_op(
    provider: AnalyzerProvider, attribute: str, existing: Sequence[tuple[int, str]]
) -> MemoryOp:
    return _checked_decide(provider.decide_attribute_op, attribute, existing, "attribute")


def merge_cluster(provider: AnalyzerProvider, cluster_members: Sequence[str]) -> str:
    if not cluster_members:
        raise InvalidArgument("cannot merge an empty cluster")
    if len(cluster_members) == 1:
        return cluster_members[0]
    try:
        merged = provider.merge_cluster(cluster_members)
    except ProviderError as exc:
        fallback = longest_member(cluster_members)
        logger.warning("cluster merge failed (%s); falling back to longest member", exc)
        return fallback
    if not merged.strip():
        return longest_member(cluster_members)
    return merged


def respond(provider: AnalyzerProvider, context: str, query: str) -> str:
    if not query.strip():
        raise InvalidArgument("cannot respond to an empty query")
    effective = context if context.strip() else EMPTY_CONTEXT_MARKER
    return provider.respond(effective, query)
