from __future__ import annotations

import numpy as np
import pytest

from memtriad import (
    CachingProvider,
    HashedBagOfWordsProvider,
    Providers,
    RuleBasedAnalyzer,
    Vector,
)


@pytest.fixture
def embedder():
    return CachingProvider(HashedBagOfWordsProvider(dimension=384, seed=42))


@pytest.fixture
def rule_providers(embedder):
    return Providers(analyzer=RuleBasedAnalyzer(), embedder=embedder)


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)


def random_vector(rng, dimension: int) -> Vector:
    values = rng.standard_normal(dimension).astype(np.float32)
    if abs(float(values[0])) < 1e-3:
        values[0] = 1e-3  # keep norms clearly nonzero
    return Vector.of(values)
