"""Multi-user service: per-user locking, snapshot persistence, HTTP API.

One writer at a time per user; reads share a readers-writer lock so a read
always sees a complete pre- or post-write state. Queries are read-only (the
query turn is not indexed; clients ingest turns explicitly). With a data
directory configured, every mutation persists that user's snapshot.
"""

from __future__ import annotations

import hashlib
import logging
import threading
import time
from pathlib import Path
from typing import Optional

from . import snapshot as snapshot_io
from .config import EngineConfig
from .core import Role, UserMemory, new_user_memory
from .errors import InvalidArgument, UnknownUser, UserExists
from .orchestrator import (
    ALL_CHANNELS,
    EngineSettings,
    Providers,
    encode_interaction,
    retrieve,
    run_compaction,
)
from . import analyzer as analyzer_ops

logger = logging.getLogger(__name__)


class RWLock:
    """Readers-writer lock, writer-preferring enough for a single-writer user."""

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False

    def acquire_read(self) -> None:
        with self._cond:
            while self._writer:
                self._cond.wait()
            self._readers += 1

    def release_read(self) -> None:
        with self._cond:
            self._readers -= 1
            if self._readers == 0:
                self._cond.notify_all()

    def acquire_write(self) -> None:
        with self._cond:
            while self._writer or self._readers:
                self._cond.wait()
            self._writer = True

    def release_write(self) -> None:
        with self._cond:
            self._writer = False
            self._cond.notify_all()

    class _Guard:
        def __init__(self, acquire, release):
            self._acquire = acquire
            self._release = release

        def __enter__(self):
            self._acquire()

        def __exit__(self, *exc):
            self._release()
            return False

    def reading(self) -> "_Guard":
        return self._Guard(self.acquire_read, self.release_read)

    def writing(self) -> "_Guard":
        return self._Guard(self.acquire_write, self.release_write)


_CHANNEL_ALIASES = {
    "wm": "working",
    "em": "episodic",
    "pm": "persona",
    "working": "working",
    "episodic": "episodic",
    "persona": "persona",
}


def parse_channels(raw: Optional[list[str] | str]) -> frozenset[str]:
    """Accepts full channel names or the wm/em/pm shorthand, or None for all."""
    if raw is None:
        return ALL_CHANNELS
    if isinstance(raw, str):
        raw = [part for part in raw.split(",") if part.strip()]
    channels = set()
    for item in raw:
        key = item.strip().lower()
        if key not in _CHANNEL_ALIASES:
            raise InvalidArgument(f"unknown channel {item!r}")
        channels.add(_CHANNEL_ALIASES[key])
    if not channels:
        return ALL_CHANNELS
    return frozenset(channels)


class MemoryService:
    """Owns all user memories and serializes writes per user."""

    def __init__(self, config: EngineConfig, providers: Optional[Providers] = None):
        self.config = config
        self.providers = providers if providers is not None else config.build_providers()
        self.settings: EngineSettings = config.settings()
        self._users: dict[str, UserMemory] = {}
        self._locks: dict[str, RWLock] = {}
        self._registry_lock = threading.Lock()
        self._data_dir = Path(config.data_dir) if config.data_dir else None
        if self._data_dir:
            self._data_dir.mkdir(parents=True, exist_ok=True)
            self._load_existing()

    # -- user registry ---------------------------------------------------

    def _load_existing(self) -> None:
        assert self._data_dir is not None
        for path in sorted(self._data_dir.glob("*.snap")):
            mem = snapshot_io.load_snapshot(path)
            self._users[mem.user_id] = mem
            self._locks[mem.user_id] = RWLock()
            logger.info("loaded snapshot for user %s", mem.user_id)

    def _snapshot_path(self, user_id: str) -> Path:
        assert self._data_dir is not None
        digest = hashlib.sha256(user_id.encode("utf-8")).hexdigest()[:16]
        return self._data_dir / f"{digest}.snap"

    def _persist(self, user_id: str) -> None:
        if self._data_dir:
            snapshot_io.save_snapshot(self._users[user_id], self._snapshot_path(user_id))

    def create_user(self, user_id: str) -> None:
        if not user_id:
            raise InvalidArgument("user_id must be non-empty")
        with self._registry_lock:
            if user_id in self._users:
                raise UserExists(f"user {user_id!r} already exists")
            self._users[user_id] = new_user_memory(user_id)
            self._locks[user_id] = RWLock()
        self._persist(user_id)

    def _get_or_create(self, user_id: str) -> tuple[UserMemory, RWLock]:
        with self._registry_lock:
            if user_id not in self._users:
                self._users[user_id] = new_user_memory(user_id)
                self._locks[user_id] = RWLock()
            return self._users[user_id], self._locks[user_id]

    def _get(self, user_id: str) -> tuple[UserMemory, RWLock]:
        with self._registry_lock:
            if user_id not in self._users:
                raise UnknownUser(f"unknown user {user_id!r}")
            return self._users[user_id], self._locks[user_id]

    def user_ids(self) -> list[str]:
        with self._registry_lock:
            return sorted(self._users)

    # -- operations --------------------------------------------------------

    def ingest(
        self,
        user_id: str,
        text: str,
        role: str = "user",
        session_id: Optional[str] = None,
        timestamp=None,
    ) -> dict:
        """Encode one turn; creates the user on first contact."""
        mem, lock = self._get_or_create(user_id)
        with lock.writing():
            interaction, annotation = encode_interaction(
                mem,
                text,
                Role(role),
                self.providers,
                settings=self.settings,
                timestamp=timestamp,
                session_id=session_id,
            )
            self._persist(user_id)
        return {
            "interaction_id": interaction.id,
            "annotation": _annotation_dict(annotation),
        }

    def query(
        self,
        user_id: str,
        text: str,
        channels: Optional[list[str] | str] = None,
        max_tokens: Optional[int] = None,
        respond: bool = False,
    ) -> dict:
        """Read-only retrieval; optionally also generates a response."""
        mem, lock = self._get(user_id)
        budget = self.config.budget(max_tokens)
        started = time.perf_counter()
        with lock.reading():
            bundle = retrieve(
                mem,
                text,
                self.providers,
                budget=budget,
                channels=parse_channels(channels),
                settings=self.settings,
            )
        retrieved_at = time.perf_counter()
        response = None
        if respond:
            response = analyzer_ops.respond(self.providers.analyzer, bundle.merged_context, text)
        finished = time.perf_counter()

        result = bundle.to_dict()
        result["context"] = result.pop("merged_context")
        result["response"] = response
        result["latency_ms"] = round((finished - started) * 1000.0, 3)
        # engine overhead vs. responder (model) time
        result["retrieval_ms"] = round((retrieved_at - started) * 1000.0, 3)
        result["respond_ms"] = round((finished - retrieved_at) * 1000.0, 3)
        return result

    def profile(self, user_id: str) -> dict:
        """Persona dump for profile-convergence inspection."""
        mem, lock = self._get(user_id)
        with lock.reading():
            return {
                "user_id": user_id,
                "facts": [_entry_dict(e) for e in mem.persona.facts],
                "attributes": [_entry_dict(e) for e in mem.persona.attributes],
            }

    def compact(self, user_id: str) -> dict:
        mem, lock = self._get(user_id)
        with lock.writing():
            result = run_compaction(mem, self.providers, self.settings)
            self._persist(user_id)
        return {
            "components_merged": result.merged,
            "components": result.components,
            "partial": result.partial,
        }

    def stats(self, user_id: str) -> dict:
        mem, lock = self._get(user_id)
        with lock.reading():
            return {
                "user_id": user_id,
                "interactions": len(mem.interactions),
                "topics": mem.topic_index.topic_count(),
                "clue_words": mem.clue_index.word_count(),
                "persona_facts": len(mem.persona.facts),
                "persona_attributes": len(mem.persona.attributes),
                "analysis_failures": mem.analysis_failures,
                "snapshot_bytes": snapshot_io.snapshot_size(mem),
            }


def _annotation_dict(annotation) -> Optional[dict]:
    if annotation is None:
        return None
    return {
        "topic": annotation.topic,
        "attitude": annotation.attitude.value,
        "reason": annotation.reason,
        "facts": list(annotation.facts),
        "attributes": list(annotation.attributes),
        "summary": annotation.summary,
        "rationale": annotation.rationale,
    }


def _entry_dict(entry) -> dict:
    return {
        "id": entry.id,
        "text": entry.text,
        "created_from": entry.created_from,
        "source_ids": list(entry.source_ids),
        "updated_at": entry.updated_at.isoformat() if entry.updated_at else None,
    }


# ---------------------------------------------------------------------------
# HTTP API.


def create_app(service: MemoryService):
    from fastapi import Depends, FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import JSONResponse
    from fastapi.security.utils import get_authorization_scheme_param
    from pydantic import BaseModel, Field

    app = FastAPI(title="memtriad", version="0.1.0")

    class _HTTPError(Exception):
        def __init__(self, status: int, detail):
            self.status = status
            self.detail = detail

    async def check_auth(request: Request):
        expected = service.config.bearer_token
        if not expected:
            return
        scheme, param = get_authorization_scheme_param(
            request.headers.get("Authorization", "")
        )
        if scheme.lower() != "bearer" or param != expected:
            raise _HTTPError(401, "missing or invalid bearer token")

    @app.exception_handler(_HTTPError)
    async def http_error_handler(_, exc: _HTTPError):
        return JSONResponse(status_code=exc.status, content={"detail": exc.detail})

    @app.exception_handler(RequestValidationError)
    async def validation_handler(_, exc: RequestValidationError):
        fields = [
            {"field": ".".join(str(p) for p in err["loc"]), "message": err["msg"]}
            for err in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": "invalid request body", "errors": fields})

    @app.exception_handler(UnknownUser)
    async def unknown_user_handler(_, exc: UnknownUser):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(UserExists)
    async def user_exists_handler(_, exc: UserExists):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(InvalidArgument)
    async def invalid_argument_handler(_, exc: InvalidArgument):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    from .errors import ProviderError

    @app.exception_handler(ProviderError)
    async def provider_error_handler(_, exc: ProviderError):
        return JSONResponse(
            status_code=502,
            content={"detail": "provider failure", "provider_error": str(exc), "attempts": exc.attempts},
        )

    class CreateUserBody(BaseModel):
        user_id: str = Field(min_length=1)

    class IngestBody(BaseModel):
        role: str = Field(default="user", pattern="^(user|assistant)$")
        text: str = Field(min_length=1)
        session_id: Optional[str] = None

    class QueryBody(BaseModel):
        text: str = Field(min_length=1)
        channels: Optional[list[str]] = None
        max_tokens: Optional[int] = None
        respond: bool = False

    @app.get("/v1/health")
    async def health():
        return {"status": "ok"}

    @app.post("/v1/users", status_code=201, dependencies=[Depends(check_auth)])
    async def create_user(body: CreateUserBody):
        service.create_user(body.user_id)
        return {"user_id": body.user_id}

    @app.post(
        "/v1/users/{user_id}/interactions",
        status_code=201,
        dependencies=[Depends(check_auth)],
    )
    async def ingest(user_id: str, body: IngestBody):
        return service.ingest(
            user_id, text=body.text, role=body.role, session_id=body.session_id
        )

    @app.post("/v1/users/{user_id}/query", dependencies=[Depends(check_auth)])
    async def query(user_id: str, body: QueryBody):
        return service.query(
            user_id,
            text=body.text,
            channels=body.channels,
            max_tokens=body.max_tokens,
            respond=body.respond,
        )

    @app.get("/v1/users/{user_id}/profile", dependencies=[Depends(check_auth)])
    async def profile(user_id: str):
        return service.profile(user_id)

    @app.post("/v1/users/{user_id}/compact", dependencies=[Depends(check_auth)])
    async def compact(user_id: str):
        return service.compact(user_id)

    @app.get("/v1/users/{user_id}/stats", dependencies=[Depends(check_auth)])
    async def stats(user_id: str):
        return service.stats(user_id)

    return app


def serve(config: EngineConfig) -> None:  # pragma: no cover - thin uvicorn wrapper
    import uvicorn

    service = MemoryService(config)
    uvicorn.run(create_app(service), host=config.host, port=config.port, log_level="info")
