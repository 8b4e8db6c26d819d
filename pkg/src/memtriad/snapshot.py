"""Per-user snapshot persistence: one self-contained, versioned file.

The on-disk format is canonical JSON (sorted keys, no whitespace) holding
the full memory state, gzip-compressed with a zeroed mtime so identical
states always serialize to identical bytes. Embeddings travel as base64 of
their little-endian float32 buffers, which makes save/load round-trips
bit-exact. Loads are all-or-nothing: a corrupt or truncated file raises
before any state is constructed.
"""

from __future__ import annotations

import base64
import gzip
import json
import os
from datetime import datetime
from typing import Optional

import numpy as np

from .core import Interaction, Role, UserMemory
from .embedding import Vector
from .episodic_memory import ClueIndex
from .errors import SnapshotCorrupt, UnsupportedVersion
from .persona_memory import PersonaEntry, PersonaStore
from .working_memory import TopicIndex

SNAPSHOT_VERSION = 1


def _encode_vector(vec: Vector) -> str:
    return base64.b64encode(vec.values.astype("<f4").tobytes()).decode("ascii")


def _decode_vector(raw: str) -> Vector:
    data = np.frombuffer(base64.b64decode(raw), dtype="<f4")
    return Vector.of(data)


def _encode_instant(ts: Optional[datetime]) -> Optional[str]:
    return ts.isoformat() if ts is not None else None


def _decode_instant(raw: Optional[str]) -> Optional[datetime]:
    return datetime.fromisoformat(raw) if raw else None


def _encode_entry(entry: PersonaEntry) -> dict:
    return {
        "id": entry.id,
        "text": entry.text,
        "kind": entry.kind,
        "created_from": entry.created_from,
        "updated_at": _encode_instant(entry.updated_at),
        "source_ids": list(entry.source_ids),
        "vector": _encode_vector(entry.vector),
    }


def _decode_entry(doc: dict) -> PersonaEntry:
    return PersonaEntry(
        id=int(doc["id"]),
        text=doc["text"],
        kind=doc["kind"],
        created_from=doc["created_from"],
        updated_at=_decode_instant(doc["updated_at"]),
        source_ids=tuple(doc["source_ids"]),
        vector=_decode_vector(doc["vector"]),
    )


def memory_to_doc(mem: UserMemory) -> dict:
    return {
        "format_version": SNAPSHOT_VERSION,
        "user_id": mem.user_id,
        "ingested_count": mem.ingested_count,
        "analysis_failures": mem.analysis_failures,
        "interactions": [
            [
                i.id,
                i.role.value,
                i.text,
                i.timestamp.isoformat(),
                i.session_id,
            ]
            for i in mem.interactions
        ],
        "topics": [
            {
                "topic": topic,
                "ids": sorted(mem.topic_index.entries[topic]),
                "vector": _encode_vector(mem.topic_index.topic_vectors[topic]),
            }
            for topic in sorted(mem.topic_index.entries)
        ],
        "postings": {
            word: sorted(ids) for word, ids in mem.clue_index.postings.items()
        },
        "persona": {
            "facts": [_encode_entry(e) for e in mem.persona.facts],
            "attributes": [_encode_entry(e) for e in mem.persona.attributes],
            "next_fact_id": mem.persona.next_fact_id,
            "next_attribute_id": mem.persona.next_attribute_id,
            "pending_attribute_count": mem.persona.pending_attribute_count,
            "last_compaction_partial": mem.persona.last_compaction_partial,
        },
    }


def memory_from_doc(doc: dict) -> UserMemory:
    try:
        version = doc["format_version"]
    except (KeyError, TypeError):
        raise SnapshotCorrupt("snapshot missing format_version") from None
    if version != SNAPSHOT_VERSION:
        raise UnsupportedVersion(f"snapshot format {version} unsupported (want {SNAPSHOT_VERSION})")
    try:
        topic_index = TopicIndex()
        for item in doc["topics"]:
            topic_index.entries[item["topic"]] = set(item["ids"])
            topic_index.topic_vectors[item["topic"]] = _decode_vector(item["vector"])
        clue_index = ClueIndex(
            postings={word: set(ids) for word, ids in doc["postings"].items()}
        )
        persona_doc = doc["persona"]
        persona = PersonaStore(
            facts=[_decode_entry(e) for e in persona_doc["facts"]],
            attributes=[_decode_entry(e) for e in persona_doc["attributes"]],
            next_fact_id=int(persona_doc["next_fact_id"]),
            next_attribute_id=int(persona_doc["next_attribute_id"]),
            pending_attribute_count=int(persona_doc["pending_attribute_count"]),
            last_compaction_partial=bool(persona_doc["last_compaction_partial"]),
        )
        interactions = [
            Interaction(
                id=int(item[0]),
                user_id=doc["user_id"],
                role=Role(item[1]),
                text=item[2],
                timestamp=datetime.fromisoformat(item[3]),
                session_id=item[4],
            )
            for item in doc["interactions"]
        ]
        return UserMemory(
            user_id=doc["user_id"],
            topic_index=topic_index,
            clue_index=clue_index,
            persona=persona,
            interactions=interactions,
            ingested_count=int(doc["ingested_count"]),
            analysis_failures=int(doc["analysis_failures"]),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise SnapshotCorrupt(f"snapshot structure invalid: {exc}") from exc


def dumps(mem: UserMemory) -> bytes:
    payload = json.dumps(
        memory_to_doc(mem), sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")
    return gzip.compress(payload, mtime=0)


def loads(blob: bytes) -> UserMemory:
    try:
        payload = gzip.decompress(blob)
    except (OSError, EOFError) as exc:
        raise SnapshotCorrupt(f"snapshot is not valid gzip data: {exc}") from exc
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotCorrupt(f"snapshot payload is not valid JSON: {exc}") from exc
    return memory_from_doc(doc)


def save_snapshot(mem: UserMemory, path: str | os.PathLike) -> None:
    """Atomic write: the target either keeps its old content or is complete."""
    blob = dumps(mem)
    path = os.fspath(path)
    tmp_path = f"{path}.tmp.{os.getpid()}"
    with open(tmp_path, "wb") as fh:
        fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp_path, path)


def load_snapshot(path: str | os.PathLike) -> UserMemory:
    with open(path, "rb") as fh:
        return loads(fh.read())


def snapshot_size(mem: UserMemory) -> int:
    """Serialized size in bytes, without touching disk."""
    return len(dumps(mem))
