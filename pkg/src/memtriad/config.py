"""Engine configuration: one flat JSON file, env overrides for secrets."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .analyzer import RemoteAnalyzer, RuleBasedAnalyzer
from .embedding import (
    CachingProvider,
    HashedBagOfWordsProvider,
    RemoteEmbeddingProvider,
)
from .errors import InvalidArgument
from .orchestrator import (
    MIN_BUDGET,
    BudgetPolicy,
    EngineSettings,
    Providers,
)

ENV_ANALYZER_TOKEN = "MEMTRIAD_ANALYZER_TOKEN"
ENV_EMBEDDING_TOKEN = "MEMTRIAD_EMBEDDING_TOKEN"
ENV_BEARER_TOKEN = "MEMTRIAD_BEARER_TOKEN"


@dataclass
class EngineConfig:
    # embedding provider
    embedding_provider: str = "hashed"  # hashed | remote
    embedding_dimension: int = 384
    embedding_seed: int = 42
    embedding_endpoint: str = ""
    embedding_model: str = ""
    embedding_token: Optional[str] = None

    # analyzer provider
    analyzer_provider: str = "rule_based"  # rule_based | remote
    analyzer_endpoint: str = ""
    analyzer_model: str = ""
    analyzer_token: Optional[str] = None
    analyzer_timeout_s: float = 60.0
    analyzer_retries: int = 2
    analyzer_max_concurrency: int = 4

    # retrieval
    k_topics: int = 3
    min_topic_similarity: float = 0.30
    k_facts: int = 10
    k_attributes: int = 10

    # context budget
    max_tokens: int = 1500
    channel_order: str = "persona_first"  # persona_first | paper

    # persona maintenance
    compaction_threshold: int = 20
    compaction_min_similarity: float = 0.60

    # behavior flags
    index_assistant_turns: bool = False
    retain_raw_log: bool = True

    # service
    host: str = "127.0.0.1"
    port: int = 8080
    bearer_token: Optional[str] = None
    data_dir: Optional[str] = None

    def __post_init__(self) -> None:
        if self.embedding_dimension <= 0:
            raise InvalidArgument("embedding_dimension must be positive")
        if min(self.k_topics, self.k_facts, self.k_attributes) < 1:
            raise InvalidArgument("k_topics, k_facts, k_attributes must be >= 1")
        if self.max_tokens < MIN_BUDGET:
            raise InvalidArgument(f"max_tokens must be >= {MIN_BUDGET}")
        if self.embedding_provider not in ("hashed", "remote"):
            raise InvalidArgument(f"unknown embedding_provider {self.embedding_provider!r}")
        if self.analyzer_provider not in ("rule_based", "remote"):
            raise InvalidArgument(f"unknown analyzer_provider {self.analyzer_provider!r}")
        if self.channel_order not in ("persona_first", "paper"):
            raise InvalidArgument(f"unknown channel_order {self.channel_order!r}")
        if self.embedding_provider == "remote" and not self.embedding_endpoint:
            raise InvalidArgument("remote embedding provider needs embedding_endpoint")
        if self.analyzer_provider == "remote" and not self.analyzer_endpoint:
            raise InvalidArgument("remote analyzer provider needs analyzer_endpoint")

    @classmethod
    def from_dict(cls, doc: dict) -> "EngineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        config = cls(**doc)
        return config._with_env_overrides()

    @classmethod
    def from_file(cls, path: str | Path) -> "EngineConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise InvalidArgument(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise InvalidArgument(f"config file {path} must hold a JSON object")
        return cls.from_dict(doc)

    def _with_env_overrides(self) -> "EngineConfig":
        # secrets never need to live in the config file
        if os.environ.get(ENV_ANALYZER_TOKEN):
            self.analyzer_token = os.environ[ENV_ANALYZER_TOKEN]
        if os.environ.get(ENV_EMBEDDING_TOKEN):
            self.embedding_token = os.environ[ENV_EMBEDDING_TOKEN]
        if os.environ.get(ENV_BEARER_TOKEN):
            self.bearer_token = os.environ[ENV_BEARER_TOKEN]
        return self

    def build_providers(self) -> Providers:
        if self.embedding_provider == "hashed":
            embedder = HashedBagOfWordsProvider(
                dimension=self.embedding_dimension, seed=self.embedding_seed
            )
        else:
            embedder = RemoteEmbeddingProvider(
                endpoint=self.embedding_endpoint,
                model=self.embedding_model,
                dimension=self.embedding_dimension,
                token=self.embedding_token,
            )
        if self.analyzer_provider == "rule_based":
            analyzer = RuleBasedAnalyzer()
        else:
            analyzer = RemoteAnalyzer(
                endpoint=self.analyzer_endpoint,
                model=self.analyzer_model,
                token=self.analyzer_token,
                timeout_s=self.analyzer_timeout_s,
                retries=self.analyzer_retries,
                max_concurrency=self.analyzer_max_concurrency,
            )
        return Providers(analyzer=analyzer, embedder=CachingProvider(embedder))

    def budget(self, max_tokens: Optional[int] = None) -> BudgetPolicy:
        tokens = max_tokens if max_tokens is not None else self.max_tokens
        if self.channel_order == "paper":
            return BudgetPolicy.paper_order(max_tokens=tokens)
        return BudgetPolicy(max_tokens=tokens)

    def settings(self) -> EngineSettings:
        return EngineSettings(
            k_topics=self.k_topics,
            min_topic_similarity=self.min_topic_similarity,
            k_facts=self.k_facts,
            k_attributes=self.k_attributes,
            compaction_threshold=self.compaction_threshold,
            compaction_min_similarity=self.compaction_min_similarity,
            index_assistant_turns=self.index_assistant_turns,
            retain_raw_log=self.retain_raw_log,
        )
