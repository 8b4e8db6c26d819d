import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memtriad import ClueIndex, clue_score, index_clues, retrieve_episodic, tokenize
from memtriad.episodic_memory import STOPWORDS


def brute_force_clue(index, query_words):
    """Oracle: argmax of 1/df over indexed query words, with the stated tie
    rules (longer word first, then lexicographically smaller)."""
    candidates = [
        (w, len(index.postings[w])) for w in query_words if w in index.postings
    ]
    if not candidates:
        return None, set()
    best = min(candidates, key=lambda pair: (pair[1], -len(pair[0]), pair[0]))
    return best[0], set(index.postings[best[0]])


class TestTokenize:
    def test_stopwords_removed(self):
        assert tokenize("The jazz workshop helped me") == ["jazz", "workshop", "helped"]

    def test_empty_text(self):
        assert tokenize("") == []

    def test_normalization_and_dedup(self):
        assert tokenize("Jazz, JAZZ! jazz?") == ["jazz"]

    def test_short_tokens_dropped(self):
        assert tokenize("I am a 5k runner") == ["5k", "runner"]

    def test_split_on_non_alphanumeric_runs(self):
        assert tokenize("don't stop-motion") == ["don", "stop", "motion"]

    def test_first_occurrence_order_kept(self):
        assert tokenize("beta alpha beta gamma alpha") == ["beta", "alpha", "gamma"]


class TestStopwordList:
    def test_exactly_127_entries(self):
        assert len(STOPWORDS) == 127

    def test_common_words_present(self):
        assert {"the", "and", "me", "was"} <= STOPWORDS

    def test_content_words_absent(self):
        assert {"helped", "jazz", "stress", "weekend"}.isdisjoint(STOPWORDS)


class TestIndexClues:
    def test_base_case(self):
        index = ClueIndex()
        index_clues(index, 1, ["jazz", "workshop"])
        assert index.postings == {"jazz": {1}, "workshop": {1}}

    def test_union_on_second_interaction(self):
        index = ClueIndex()
        index_clues(index, 1, ["jazz", "workshop"])
        index_clues(index, 2, ["jazz"])
        assert index.postings == {"jazz": {1, 2}, "workshop": {1}}

    def test_idempotent(self):
        index = ClueIndex()
        index_clues(index, 2, ["jazz"])
        index_clues(index, 2, ["jazz"])
        assert index.postings == {"jazz": {2}}

    def test_completeness_over_random_corpus(self, rng):
        vocabulary = [f"word{i}" for i in range(60)]
        index = ClueIndex()
        docs = {}
        for doc_id in range(1, 40):
            words = list(
                dict.fromkeys(rng.choice(vocabulary, size=rng.integers(1, 12)).tolist())
            )
            docs[doc_id] = words
            index_clues(index, doc_id, words)
        for doc_id, words in docs.items():
            for word in words:
                assert doc_id in index.postings[word]


class TestClueScore:
    def test_df_one(self):
        index = ClueIndex()
        index_clues(index, 1, ["rare"])
        assert clue_score(index, "rare") == 1.0

    def test_df_four(self):
        index = ClueIndex()
        for i in range(1, 5):
            index_clues(index, i, ["common"])
        assert clue_score(index, "common") == 0.25

    def test_unseen_word_is_not_a_candidate(self):
        assert clue_score(ClueIndex(), "ghost") is None


class TestRetrieveEpisodic:
    def test_rarest_word_wins(self):
        index = ClueIndex()
        index_clues(index, 1, ["jazz", "workshop"])
        index_clues(index, 2, ["jazz"])
        clue, ids = retrieve_episodic(index, ["jazz", "workshop"])
        assert clue == "workshop"
        assert ids == {1}

    def test_all_unseen_words(self):
        index = ClueIndex()
        index_clues(index, 1, ["jazz"])
        assert retrieve_episodic(index, ["ghost", "words"]) == (None, set())

    def test_empty_query(self):
        assert retrieve_episodic(ClueIndex(), []) == (None, set())

    def test_tie_prefers_longer_word(self):
        index = ClueIndex()
        index_clues(index, 1, ["ox", "elephant"])
        clue, _ = retrieve_episodic(index, ["ox", "elephant"])
        assert clue == "elephant"

    def test_tie_same_length_prefers_lexicographically_smaller(self):
        index = ClueIndex()
        index_clues(index, 1, ["beta", "acid"])
        clue, _ = retrieve_episodic(index, ["beta", "acid"])
        assert clue == "acid"

    def test_matches_brute_force_oracle(self, rng):
        vocabulary = [f"w{i:03d}" for i in range(500)]
        index = ClueIndex()
        for doc_id in range(1, 300):
            words = rng.choice(vocabulary, size=rng.integers(1, 15)).tolist()
            index_clues(index, doc_id, list(dict.fromkeys(words)))
        for _ in range(50):
            query = rng.choice(vocabulary + ["zzz-unseen"], size=rng.integers(1, 10)).tolist()
            assert retrieve_episodic(index, query) == brute_force_clue(index, query)

    def test_rank_equivalence_argmax_inverse_vs_argmin_df(self, rng):
        # 1/df argmax and df argmin must select the same clue
        index = ClueIndex()
        vocabulary = [f"w{i}" for i in range(40)]
        for doc_id in range(1, 60):
            words = rng.choice(vocabulary, size=5).tolist()
            index_clues(index, doc_id, list(dict.fromkeys(words)))
        query = vocabulary[:15]
        clue, _ = retrieve_episodic(index, query)
        indexed = [w for w in query if w in index.postings]
        by_score = max(
            indexed, key=lambda w: (clue_score(index, w), len(w), _ReverseLex(w))
        )
        assert clue == by_score

    def test_soundness_result_ids_come_from_postings(self):
        index = ClueIndex()
        index_clues(index, 1, ["alpha"])
        index_clues(index, 5, ["alpha", "beta"])
        clue, ids = retrieve_episodic(index, ["beta", "alpha"])
        assert ids <= index.postings[clue]


class _ReverseLex(str):
    def __lt__(self, other):
        return str(self) > str(other)
