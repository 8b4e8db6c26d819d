import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memtriad import (
    CachingProvider,
    EmbeddingCache,
    HashedBagOfWordsProvider,
    InvalidArgument,
    ProviderError,
    RemoteEmbeddingProvider,
    Vector,
    cosine_similarity,
    top_k,
)
from memtriad.errors import DimensionMismatch

from conftest import random_vector


def brute_force_top_k(candidates, query, k):
    """Independent oracle: score each candidate with the scalar cosine and
    full-sort with the same tie rule."""
    scored = [(key, cosine_similarity(vec, query)) for key, vec in candidates]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


class TestCosineSimilarity:
    def test_self_similarity_is_one(self):
        v = Vector.of([0.3, -1.2, 4.0])
        assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal_vectors(self):
        assert cosine_similarity(Vector.of([1, 0]), Vector.of([0, 1])) == 0.0

    def test_hand_computed_45_degrees(self):
        value = cosine_similarity(Vector.of([1, 0]), Vector.of([1, 1]))
        assert value == pytest.approx(1 / math.sqrt(2), abs=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cosine_similarity(Vector.of([1, 0]), Vector.of([1, 0, 0]))

    def test_zero_vector_rejected(self):
        with pytest.raises(InvalidArgument):
            cosine_similarity(Vector.of([0, 0]), Vector.of([1, 0]))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_vector(rng, 16), random_vector(rng, 16)
        assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(b, a), abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_range(self, seed):
        rng = np.random.default_rng(seed)
        value = cosine_similarity(random_vector(rng, 8), random_vector(rng, 8))
        assert -1.0 - 1e-12 <= value <= 1.0 + 1e-12


class TestTopK:
    def test_empty_candidates(self):
        assert top_k([], Vector.of([1.0]), 5) == []

    def test_exact_match_ranks_first(self, rng):
        query = random_vector(rng, 12)
        candidates = [(f"k{i}", random_vector(rng, 12)) for i in range(10)]
        candidates.append(("match", query))
        result = top_k(candidates, query, 3)
        assert result[0].key == "match"
        assert result[0].score == pytest.approx(1.0, abs=1e-9)

    def test_k_must_be_positive(self):
        with pytest.raises(InvalidArgument):
            top_k([("a", Vector.of([1.0]))], Vector.of([1.0]), 0)

    def test_matches_brute_force_oracle(self, rng):
        candidates = [(f"key{i:03d}", random_vector(rng, 24)) for i in range(100)]
        query = random_vector(rng, 24)
        got = top_k(candidates, query, 7)
        expected = brute_force_top_k(candidates, query, 7)
        assert [item.key for item in got] == [key for key, _ in expected]
        for item, (_, score) in zip(got, expected):
            assert item.score == pytest.approx(score, abs=1e-9)

    def test_ties_break_by_smaller_key(self):
        v = Vector.of([1.0, 0.0])
        candidates = [("b", v), ("a", v), ("c", v)]
        result = top_k(candidates, Vector.of([2.0, 0.0]), 3)
        assert [item.key for item in result] == ["a", "b", "c"]

    def test_scaling_invariance_of_ranking(self, rng):
        candidates = [(i, random_vector(rng, 16)) for i in range(50)]
        query = random_vector(rng, 16)
        scaled = Vector.of(query.values * np.float32(7.5))
        keys = [item.key for item in top_k(candidates, query, 10)]
        scaled_keys = [item.key for item in top_k(candidates, scaled, 10)]
        assert keys == scaled_keys

    def test_k_larger_than_candidates(self, rng):
        candidates = [(i, random_vector(rng, 8)) for i in range(3)]
        assert len(top_k(candidates, random_vector(rng, 8), 10)) == 3


class TestHashedProvider:
    def test_deterministic_across_calls(self):
        provider = HashedBagOfWordsProvider()
        a, b = provider.embed("jazz"), provider.embed("jazz")
        assert np.array_equal(a.values, b.values)

    def test_deterministic_across_instances(self):
        first = HashedBagOfWordsProvider(seed=7).embed("some text here")
        second = HashedBagOfWordsProvider(seed=7).embed("some text here")
        assert np.array_equal(first.values, second.values)

    def test_different_texts_differ(self):
        provider = HashedBagOfWordsProvider()
        sim = cosine_similarity(provider.embed("jazz"), provider.embed("workshop"))
        assert sim < 1.0

    def test_nonzero_norm_even_for_odd_input(self):
        provider = HashedBagOfWordsProvider()
        assert provider.embed("???").norm > 0  # no alnum tokens at all
        assert provider.embed("a").norm > 0

    def test_empty_text_rejected(self):
        with pytest.raises(InvalidArgument):
            HashedBagOfWordsProvider().embed("   ")

    def test_declared_dimension(self):
        provider = HashedBagOfWordsProvider(dimension=64)
        assert provider.embed("hello world").dimension == 64


class TestRemoteProvider:
    def test_unreachable_endpoint_is_provider_error(self):
        provider = RemoteEmbeddingProvider(
            endpoint="http://127.0.0.1:1/v1/embeddings",
            model="m",
            retries=1,
            backoff_s=0.0,
            timeout_s=0.2,
        )
        with pytest.raises(ProviderError) as info:
            provider.embed("hello")
        assert info.value.attempts == 2
        assert info.value.retryable


class TestCache:
    def test_second_call_hits_cache(self):
        calls = []

        class Counting:
            provider_id = "counting"
            dimension = 4

            def embed(self, text):
                calls.append(text)
                return Vector.of([1.0, 2.0, 3.0, 4.0])

        provider = CachingProvider(Counting())
        provider.embed("x")
        provider.embed("x")
        assert calls == ["x"]

    def test_cache_is_provider_scoped(self):
        cache = EmbeddingCache()
        cache.put("p1", "text", Vector.of([1.0]))
        assert cache.get("p2", "text") is None
        assert cache.get("p1", "text") is not None
