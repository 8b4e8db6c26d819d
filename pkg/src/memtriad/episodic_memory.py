"""Clue-word inverted index: associative recall keyed on rare words.

Every indexed interaction contributes its content words to a word ->
interaction-ids map. At query time the rarest indexed query word (highest
1/df) is picked as the clue and its posting set is returned wholesale.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _load_stopwords() -> frozenset[str]:
    text = resources.files("memtriad.data").joinpath("stopwords.txt").read_text("utf-8")
    return frozenset(text.split())


STOPWORDS = _load_stopwords()


def tokenize(text: str) -> list[str]:
    """Content words of ``text``, in first-occurrence order.

    Lowercase, split on non-alphanumeric runs, drop tokens shorter than two
    characters, drop stopwords, dedupe keeping the first occurrence.
    """
    seen: set[str] = set()
    out: list[str] = []
    for token in _TOKEN_RE.findall(text.lower()):
        if len(token) < 2 or token in STOPWORDS or token in seen:
            continue
        seen.add(token)
        out.append(token)
    return out


@dataclass
class ClueIndex:
    """word -> ordered set of interaction ids; df(word) = len(postings[word])."""

    postings: dict[str, set[int]] = field(default_factory=dict)

    def document_frequency(self, word: str) -> int:
        return len(self.postings.get(word, ()))

    def word_count(self) -> int:
        return len(self.postings)


def index_clues(index: ClueIndex, interaction_id: int, words: list[str]) -> ClueIndex:
    """Add ``interaction_id`` to each word's posting set. Idempotent."""
    for word in words:
        index.postings.setdefault(word, set()).add(interaction_id)
    return index


def clue_score(index: ClueIndex, word: str) -> Optional[float]:
    """1/df for an indexed word; None marks a word that is not a candidate.

    df = 0 is outside the score's domain, so unseen words are signalled
    rather than scored.
    """
    df = index.document_frequency(word)
    if df == 0:
        return None
    return 1.0 / df


def retrieve_episodic(index: ClueIndex, query_words: list[str]) -> tuple[Optional[str], set[int]]:
    """Pick the rarest indexed query word and return its postings.

    Rarest = minimal df (equivalently, maximal 1/df). Ties prefer the longer
    word, then the lexicographically smaller one. Queries with no indexed
    word retrieve nothing.
    """
    best: Optional[str] = None
    best_df = 0
    for word in query_words:
        df = index.document_frequency(word)
        if df == 0:
            continue
        if best is None:
            better = True
        elif df != best_df:
            better = df < best_df
        elif len(word) != len(best):
            better = len(word) > len(best)
        else:
            better = word < best
        if better:
            best = word
            best_df = df
    if best is None:
        return None, set()
    return best, set(index.postings[best])
