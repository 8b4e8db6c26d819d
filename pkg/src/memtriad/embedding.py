"""Embedding providers, cosine similarity, and the exact top-k primitive.

All three retrieval channels rank candidates by cosine similarity of text
embeddings. Stores here are small (topics, persona entries), so top-k is an
exact full scan; no approximate index is involved.

Two providers ship: a deterministic offline hashed bag-of-words projection
(the default; makes the whole engine testable with zero network access) and
a remote HTTP provider for real embedding models. Scoring is done in float64
regardless of storage dtype so rankings are stable across code paths.
"""

from __future__ import annotations

import hashlib
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence, Union

import numpy as np

from .errors import DimensionMismatch, InvalidArgument, ProviderError

DEFAULT_DIMENSION = 384

Key = Union[str, int]


@dataclass(frozen=True, eq=False)
class Vector:
    """A fixed-dimension embedding with its Euclidean norm cached.

    Values are stored as float32 (the snapshot wire format); the norm is
    computed in float64 from those exact bytes, so it is reproducible after
    any save/load round-trip.
    """

    values: np.ndarray
    norm: float

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Vector):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash(self.values.tobytes())

    @staticmethod
    def of(values: Sequence[float] | np.ndarray) -> "Vector":
        arr = np.asarray(values, dtype=np.float32)
        if arr.ndim != 1:
            raise InvalidArgument("vector values must be one-dimensional")
        arr.setflags(write=False)
        return Vector(values=arr, norm=float(np.linalg.norm(arr.astype(np.float64))))

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class ScoredItem:
    key: Key
    score: float


def cosine_similarity(a: Vector, b: Vector) -> float:
    """Cosine of the angle between two embeddings, in [-1, 1]."""
    if a.dimension != b.dimension:
        raise DimensionMismatch(f"dimensions differ: {a.dimension} vs {b.dimension}")
    if a.norm <= 0.0 or b.norm <= 0.0:
        raise InvalidArgument("cosine similarity requires nonzero vectors")
    dot = float(np.dot(a.values.astype(np.float64), b.values.astype(np.float64)))
    return dot / (a.norm * b.norm)


def top_k(candidates: Sequence[tuple[Key, Vector]], query: Vector, k: int) -> list[ScoredItem]:
    """The ``min(k, n)`` most similar candidates, best first.

    Ties break toward the smaller key so results are fully deterministic.
    """
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    if not candidates:
        return []
    matrix = np.stack([vec.values for _, vec in candidates]).astype(np.float64)
    norms = np.array([vec.norm for _, vec in candidates], dtype=np.float64)
    if matrix.shape[1] != query.dimension:
        raise DimensionMismatch(
            f"dimensions differ: {matrix.shape[1]} vs {query.dimension}"
        )
    if query.norm <= 0.0 or np.any(norms <= 0.0):
        raise InvalidArgument("top_k requires nonzero vectors")
    scores = (matrix @ query.values.astype(np.float64)) / (norms * query.norm)
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], candidates[i][0]))
    return [ScoredItem(key=candidates[i][0], score=float(scores[i])) for i in order[:k]]


class EmbeddingProvider(Protocol):
    """Text-to-vector interface. Implementations must be deterministic
    (same text, same vector) and safe for concurrent calls."""

    provider_id: str
    dimension: int

    def embed(self, text: str) -> Vector: ...


class HashedBagOfWordsProvider:
    """Offline deterministic provider: tokens hashed into signed buckets.

    Each lowercase alphanumeric token is hashed (keyed blake2b, fixed seed)
    to a bucket and a sign; the vector is the signed token-count histogram.
    A small constant is added to component 0 so no text embeds to the zero
    vector.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION, seed: int = 42):
        if dimension <= 0:
            raise InvalidArgument("dimension must be positive")
        self.dimension = dimension
        self.seed = seed
        self.provider_id = f"hashed-bow-d{dimension}-s{seed}"
        self._key = seed.to_bytes(8, "little")

    def embed(self, text: str) -> Vector:
        if not text.strip():
            raise InvalidArgument("cannot embed empty text")
        counts = np.zeros(self.dimension, dtype=np.float32)
        for token in _simple_tokens(text):
            digest = hashlib.blake2b(token.encode("utf-8"), key=self._key, digest_size=9).digest()
            bucket = int.from_bytes(digest[:8], "little") % self.dimension
            sign = 1.0 if digest[8] & 1 else -1.0
            counts[bucket] += sign
        counts[0] += 1e-3  # nonzero-norm guarantee
        return Vector.of(counts)


def _simple_tokens(text: str) -> Iterable[str]:
    token = []
    for ch in text.lower():
        if ch.isalnum():
            token.append(ch)
        elif token:
            yield "".join(token)
            token = []
    if token:
        yield "".join(token)


class RemoteEmbeddingProvider:
    """HTTP embedding service client.

    Wire format: POST ``{"input": [text, ...], "model": name}`` and read
    ``{"data": [{"embedding": [floats]}, ...]}`` back.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        dimension: int = DEFAULT_DIMENSION,
        token: str | None = None,
        timeout_s: float = 30.0,
        retries: int = 2,
        backoff_s: float = 0.5,
    ):
        self.endpoint = endpoint
        self.model = model
        self.dimension = dimension
        self.token = token
        self.timeout_s = timeout_s
        self.retries = retries
        self.backoff_s = backoff_s
        self.provider_id = f"remote:{model}@{endpoint}"

    def embed(self, text: str) -> Vector:
        if not text.strip():
            raise InvalidArgument("cannot embed empty text")
        import httpx

        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        payload = {"input": [text], "model": self.model}
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                response = httpx.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
                )
                response.raise_for_status()
                data = response.json()["data"][0]["embedding"]
                vec = Vector.of(data)
                if vec.dimension != self.dimension:
                    raise ProviderError(
                        f"provider returned dimension {vec.dimension}, expected {self.dimension}",
                        attempts=attempt + 1,
                    )
                return vec
            except ProviderError:
                raise
            except Exception as exc:  # network, HTTP status, malformed body
                last_error = exc
                if attempt < self.retries:
                    time.sleep(self.backoff_s * (2**attempt))
        raise ProviderError(
            f"embedding request failed: {last_error}", attempts=self.retries + 1, retryable=True
        )


class EmbeddingCache:
    """(provider_id, text) -> Vector cache.

    Topics and persona entries get re-scored on every query; caching keeps
    query latency independent of provider cost. Concurrent readers are fine;
    inserts are serialized.
    """

    def __init__(self) -> None:
        self._entries: dict[tuple[str, str], Vector] = {}
        self._lock = threading.Lock()

    @staticmethod
    def _text_key(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def get(self, provider_id: str, text: str) -> Vector | None:
        return self._entries.get((provider_id, self._text_key(text)))

    def put(self, provider_id: str, text: str, vector: Vector) -> None:
        with self._lock:
            self._entries[(provider_id, self._text_key(text))] = vector

    def __len__(self) -> int:
        return len(self._entries)


class CachingProvider:
    """Wraps any provider with an EmbeddingCache."""

    def __init__(self, inner: EmbeddingProvider, cache: EmbeddingCache | None = None):
        self.inner = inner
        self.cache = cache if cache is not None else EmbeddingCache()
        self.provider_id = inner.provider_id
        self.dimension = inner.dimension

    def embed(self, text: str) -> Vector:
        hit = self.cache.get(self.provider_id, text)
        if hit is not None:
            return hit
        vec = self.inner.embed(text)
        self.cache.put(self.provider_id, text, vec)
        return vec
