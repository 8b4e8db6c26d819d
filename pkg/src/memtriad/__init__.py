"""Long-term conversational memory engine.

Each ingested turn is distilled into three complementary stores: a curated
persona profile (facts and attributes), a topic index (working memory), and
a clue-word inverted index (episodic memory). Queries retrieve from all
three channels in parallel and assemble a token-budgeted context.
"""

from .analyzer import (
    AnalyzerProvider,
    RemoteAnalyzer,
    RuleBasedAnalyzer,
    ScriptedAnalyzer,
    annotate,
    decide_attribute_op,
    decide_fact_op,
    merge_cluster,
    respond,
)
from .config import EngineConfig
from .core import (
    Annotation,
    Attitude,
    Interaction,
    MemoryOp,
    OpKind,
    Role,
    UserMemory,
    append_interaction,
    new_user_memory,
)
from .embedding import (
    CachingProvider,
    EmbeddingCache,
    EmbeddingProvider,
    HashedBagOfWordsProvider,
    RemoteEmbeddingProvider,
    ScoredItem,
    Vector,
    cosine_similarity,
    top_k,
)
from .episodic_memory import ClueIndex, clue_score, index_clues, retrieve_episodic, tokenize
from .errors import (
    InvalidArgument,
    MemtriadError,
    OpTargetMissing,
    ParseError,
    ProviderError,
    ScriptError,
    SnapshotCorrupt,
    UnknownUser,
    UnsupportedVersion,
    UserExists,
)
from .evaluation import (
    EvalCorpus,
    EvalReport,
    bleu1,
    load_corpus,
    normalize_answer,
    run_eval,
    token_f1,
)
from .orchestrator import (
    ALL_CHANNELS,
    AnswerMode,
    BudgetPolicy,
    EngineSettings,
    Providers,
    RetrievalBundle,
    answer,
    count_tokens,
    encode_interaction,
    retrieve,
    run_compaction,
)
from .persona_memory import (
    CompactionResult,
    NearestNeighborGraph,
    PersonaEntry,
    PersonaStore,
    apply_op,
    build_nn_graph,
    compact_attributes,
    connected_components,
    nearest_neighbor,
    retrieve_persona,
)
from .service import MemoryService, create_app
from .snapshot import load_snapshot, save_snapshot, snapshot_size
from .working_memory import TopicIndex, index_topic, retrieve_working

__version__ = "0.1.0"
