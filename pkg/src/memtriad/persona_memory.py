"""Curated user profile: fact events and attributes.

Facts and attributes live in two id-ordered lists. Each incoming item is
applied through an Add/Ignore/Update op decided by the analyzer. Attributes
additionally go through periodic consolidation: build a nearest-neighbor
graph over their embeddings, take connected components, and merge each
multi-member component into one entry via the analyzer.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Callable, Optional

from .core import MemoryOp, OpKind, utc_now
from .embedding import Vector, cosine_similarity, top_k
from .errors import InvalidArgument, MemtriadError, OpTargetMissing


@dataclass(frozen=True)
class PersonaEntry:
    id: int
    text: str
    vector: Vector
    kind: str  # "fact" | "attribute"
    created_from: Optional[int] = None  # interaction id, None for merged entries
    updated_at: Optional[datetime] = None
    source_ids: tuple[int, ...] = ()  # pre-merge entry ids, for debuggability

    def render(self) -> str:
        tag = "fact" if self.kind == "fact" else "attr"
        return f"[{tag}] {self.text}"


@dataclass
class PersonaStore:
    """Fact and attribute lists, both ordered by id, ids never reused."""

    facts: list[PersonaEntry] = field(default_factory=list)
    attributes: list[PersonaEntry] = field(default_factory=list)
    pending_attribute_count: int = 0
    next_fact_id: int = 1
    next_attribute_id: int = 1
    last_compaction_partial: bool = False

    def entries(self, kind: str) -> list[PersonaEntry]:
        if kind == "fact":
            return self.facts
        if kind == "attribute":
            return self.attributes
        raise InvalidArgument(f"unknown persona kind {kind!r}")

    def _take_id(self, kind: str) -> int:
        if kind == "fact":
            taken = self.next_fact_id
            self.next_fact_id += 1
        else:
            taken = self.next_attribute_id
            self.next_attribute_id += 1
        return taken


def apply_op(
    store: PersonaStore,
    kind: str,
    op: MemoryOp,
    text: str,
    embed_fn: Callable[[str], Vector],
    created_from: Optional[int] = None,
    now: Optional[datetime] = None,
) -> PersonaStore:
    """Execute one memory op against the fact or attribute list.

    Add appends with a fresh id, Ignore is a no-op, Update replaces the
    target's text and re-embeds it while keeping its id. Raises
    OpTargetMissing for updates against absent ids; callers downgrade
    those to Add.
    """
    entries = store.entries(kind)
    if op.kind is OpKind.IGNORE:
        return store
    if not text.strip():
        raise InvalidArgument("persona entry text must be non-empty")
    stamp = now if now is not None else utc_now()
    if op.kind is OpKind.ADD:
        entries.append(
            PersonaEntry(
                id=store._take_id(kind),
                text=text,
                vector=embed_fn(text),
                kind=kind,
                created_from=created_from,
                updated_at=stamp,
            )
        )
        return store
    # update
    for i, entry in enumerate(entries):
        if entry.id == op.target_id:
            entries[i] = replace(
                entry, text=text, vector=embed_fn(text), updated_at=stamp
            )
            return store
    raise OpTargetMissing(op.target_id)  # type: ignore[arg-type]


def nearest_neighbor(attributes: list[PersonaEntry], entry_id: int) -> Optional[int]:
    """Id of the attribute most similar to ``entry_id``, or None if alone.

    Ties break toward the smaller id.
    """
    me = next((e for e in attributes if e.id == entry_id), None)
    if me is None:
        raise InvalidArgument(f"no attribute with id {entry_id}")
    others = [(e.id, e.vector) for e in attributes if e.id != entry_id]
    if not others:
        return None
    ranked = top_k(others, me.vector, 1)
    return int(ranked[0].key)


@dataclass(frozen=True)
class NearestNeighborGraph:
    """Each vertex contributes one edge to its nearest neighbor; edges are
    stored as deduplicated unordered pairs."""

    vertices: frozenset[int]
    edges: frozenset[tuple[int, int]]


def build_nn_graph(
    attributes: list[PersonaEntry],
    min_similarity: Optional[float] = None,
) -> NearestNeighborGraph:
    """Nearest-neighbor graph over attribute embeddings.

    With ``min_similarity`` set, edges whose endpoint similarity falls below
    the floor are omitted; the unfiltered graph links every vertex to its
    neighbor, which would force every compaction pass to merge something.
    """
    if not attributes:
        raise InvalidArgument("graph needs at least one attribute")
    vertices = frozenset(e.id for e in attributes)
    edges: set[tuple[int, int]] = set()
    by_id = {e.id: e for e in attributes}
    for entry in attributes:
        neighbor = nearest_neighbor(attributes, entry.id)
        if neighbor is None:
            continue
        if min_similarity is not None:
            sim = cosine_similarity(entry.vector, by_id[neighbor].vector)
            if sim < min_similarity:
                continue
        edges.add((min(entry.id, neighbor), max(entry.id, neighbor)))
    return NearestNeighborGraph(vertices=vertices, edges=frozenset(edges))


def connected_components(graph: NearestNeighborGraph) -> list[set[int]]:
    """Partition of the vertex set into edge-connected groups.

    Components come back ordered by their smallest member id.
    """
    adjacency: dict[int, set[int]] = {v: set() for v in graph.vertices}
    for a, b in graph.edges:
        adjacency[a].add(b)
        adjacency[b].add(a)
    seen: set[int] = set()
    components: list[set[int]] = []
    for start in sorted(graph.vertices):
        if start in seen:
            continue
        component = {start}
        frontier = [start]
        while frontier:
            node = frontier.pop()
            for nxt in adjacency[node]:
                if nxt not in component:
                    component.add(nxt)
                    frontier.append(nxt)
        seen |= component
        components.append(component)
    return components


@dataclass(frozen=True)
class CompactionResult:
    components: int
    merged: int  # multi-member components consolidated into one entry
    partial: bool  # True when some component's merge failed and was kept apart


DEFAULT_COMPACTION_MIN_SIMILARITY = 0.60


def compact_attributes(
    store: PersonaStore,
    merge_fn: Callable[[list[str]], str],
    embed_fn: Callable[[str], Vector],
    min_similarity: Optional[float] = DEFAULT_COMPACTION_MIN_SIMILARITY,
    now: Optional[datetime] = None,
) -> CompactionResult:
    """Consolidate near-duplicate attributes.

    Multi-member components are replaced by one merged entry with a fresh id
    (source ids retained); singleton components keep their entry untouched,
    which is what makes back-to-back compactions a fixed point. A failed
    merge leaves that component's members in place and flags the run as
    partial.
    """
    attributes = store.attributes
    if not attributes:
        store.pending_attribute_count = 0
        store.last_compaction_partial = False
        return CompactionResult(components=0, merged=0, partial=False)
    graph = build_nn_graph(attributes, min_similarity=min_similarity)
    components = connected_components(graph)
    by_id = {e.id: e for e in attributes}
    stamp = now if now is not None else utc_now()
    new_entries: list[PersonaEntry] = []
    merged = 0
    partial = False
    for component in components:
        members = [by_id[i] for i in sorted(component)]
        if len(members) == 1:
            new_entries.append(members[0])
            continue
        texts = [m.text for m in members]
        try:
            merged_text = merge_fn(texts)
        except MemtriadError:
            new_entries.extend(members)
            partial = True
            continue
        new_entries.append(
            PersonaEntry(
                id=store._take_id("attribute"),
                text=merged_text,
                vector=embed_fn(merged_text),
                kind="attribute",
                updated_at=stamp,
                source_ids=tuple(m.id for m in members),
            )
        )
        merged += 1
    new_entries.sort(key=lambda e: e.id)
    store.attributes = new_entries
    store.pending_attribute_count = 0
    store.last_compaction_partial = partial
    return CompactionResult(components=len(components), merged=merged, partial=partial)


def retrieve_persona(
    store: PersonaStore,
    query_vector: Vector,
    k_facts: int = 10,
    k_attributes: int = 10,
) -> list[PersonaEntry]:
    """Top facts followed by top attributes, each ranked by similarity."""
    if k_facts < 1 or k_attributes < 1:
        raise InvalidArgument("k_facts and k_attributes must be >= 1")
    result: list[PersonaEntry] = []
    for entries, k in ((store.facts, k_facts), (store.attributes, k_attributes)):
        if not entries:
            continue
        by_id = {e.id: e for e in entries}
        ranked = top_k([(e.id, e.vector) for e in entries], query_vector, k)
        result.extend(by_id[int(item.key)] for item in ranked)
    return result
