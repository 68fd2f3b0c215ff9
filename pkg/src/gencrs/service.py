"""HTTP facade over a trained pipeline: chat sessions, mode forcing, item
conditioning, and beam inspection.

Sessions live in memory. Turns within one session are serialized by a
per-session lock; the model, trie, and catalog are shared read-only.
"""

from __future__ import annotations

import datetime
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import toylm
from .catalog import Catalog, load_catalog
from .corpus import CHAT, REC, Tokenizer, Turn, serialize_context
from .decoder import generate, recommend_topk
from .pipeline import _load_trie, load_corpus_dir
from .sid import BOI, EOI, SidError, SidTrie, lookup


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class HistoryEntry:
    role: str
    text: str
    item_id: Optional[str] = None
    # what the model saw or said, kept verbatim for context rebuilding
    model_text: str = ""

    def view(self) -> dict:
        out = {"role": self.role, "text": self.text}
        if self.item_id is not None:
            out["item_id"] = self.item_id
        return out


@dataclass
class Session:
    session_id: str
    created_at: str
    history: List[HistoryEntry] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def view(self) -> dict:
        return {"session_id": self.session_id,
                "created_at": self.created_at,
                "history": [h.view() for h in self.history]}


@dataclass
class Runtime:
    model: toylm.LmModel
    tokenizer: Tokenizer
    trie: SidTrie
    catalog: Catalog
    beam_width: int = 50
    max_text_tokens: int = 40
    debug: bool = False


class MessageBody(BaseModel):
    text: str
    mode_override: Optional[str] = Field(default=None, pattern="^(rec|chat)$")
    item_override: Optional[str] = None
    want_topk: Optional[int] = Field(default=None, ge=1)


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _render_text(tokens, trie: SidTrie, tokenizer: Tokenizer,
                 catalog: Catalog) -> str:
    """Token strings with each sid span rendered as «title» (item_id)."""
    sv = tokenizer.sid_vocab
    out: List[str] = []
    i = 0
    while i < len(tokens):
        if tokens[i] == BOI:
            codes: List[int] = []
            i += 1
            while i < len(tokens) and tokens[i] != EOI:
                parsed = sv.parse_sid_token(tokens[i])
                if parsed is not None:
                    codes.append(parsed[1])
                i += 1
            i += 1  # past EOI
            try:
                item_id = lookup(trie, codes)
                title = catalog.get(item_id).title
                out.append(f"«{title}» ({item_id})")
            except (KeyError, SidError):
                out.append("«unknown item»")
        else:
            out.append(tokens[i])
            i += 1
    return " ".join(out)


def create_app(runtime: Optional[Runtime], static_dir=None) -> FastAPI:
    """App factory. runtime=None models a server whose artifacts failed to
    load: every session endpoint answers 503 until a runtime is attached."""
    app = FastAPI(title="gencrs")
    sessions: dict = {}
    store_lock = threading.Lock()
    app.state.runtime = runtime
    app.state.sessions = sessions

    @app.exception_handler(ServiceError)
    async def on_service_error(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code,
                                     "message": exc.message})

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request,
                                  exc: RequestValidationError):
        return JSONResponse(status_code=422,
                            content={"code": "invalid_request",
                                     "message": str(exc.errors()[:1])})

    def need_runtime() -> Runtime:
        rt = app.state.runtime
        if rt is None:
            raise ServiceError(503, "model_not_loaded",
                               "the model is not loaded")
        return rt

    def need_session(session_id: str) -> Session:
        with store_lock:
            session = sessions.get(session_id)
        if session is None:
            raise ServiceError(404, "unknown_session",
                               f"no session {session_id!r}")
        return session

    @app.get("/api/health")
    async def health():
        rt = app.state.runtime
        if rt is None:
            return {"status": "loading"}
        return {"status": "ok", "items": len(rt.catalog),
                "vocab": rt.tokenizer.vocab_size}

    @app.post("/api/sessions")
    async def create_session():
        need_runtime()
        session = Session(session_id=uuid.uuid4().hex, created_at=_now())
        with store_lock:
            sessions[session.session_id] = session
        return {"session_id": session.session_id}

    @app.get("/api/sessions/{session_id}")
    async def get_history(session_id: str):
        need_runtime()
        return need_session(session_id).view()

    @app.get("/api/items")
    async def search_items(query: str = ""):
        rt = need_runtime()
        hits = rt.catalog.search_titles(query) if query else []
        return {"items": [{"item_id": it.item_id, "title": it.title}
                          for it in hits]}

    @app.post("/api/sessions/{session_id}/messages")
    async def post_message(session_id: str, body: MessageBody):
        rt = need_runtime()
        session = need_session(session_id)
        mode_override = {None: None, "rec": REC, "chat": CHAT}[
            body.mode_override]
        if body.item_override is not None:
            if body.item_override not in rt.catalog:
                raise ServiceError(400, "unknown_item",
                                   f"no item {body.item_override!r}")
            if mode_override == CHAT:
                raise ServiceError(400, "bad_override",
                                   "item_override requires rec mode")
        with session.lock:
            turns = [Turn(role=h.role, text=h.model_text)
                     for h in session.history]
            turns.append(Turn(role="user", text=body.text))
            context = rt.tokenizer.encode(serialize_context(turns))
            try:
                result = generate(
                    rt.model, rt.tokenizer, rt.trie, context,
                    mode_override=mode_override,
                    item_override=body.item_override,
                    max_text_tokens=rt.max_text_tokens)
            except ValueError as exc:
                raise ServiceError(400, "generation_failed", str(exc))
            payload = {"mode": result.mode}
            if result.mode == REC:
                item = rt.catalog.get(result.item_id)
                payload["item_id"] = item.item_id
                payload["item_title"] = item.title
                if body.want_topk:
                    recs = recommend_topk(
                        rt.model, rt.tokenizer, rt.trie, context,
                        beam_width=max(rt.beam_width, body.want_topk),
                        k=min(body.want_topk, rt.trie.size))
                    sv = rt.tokenizer.sid_vocab
                    payload["topk"] = [
                        {"item_id": e.item_id,
                         "title": rt.catalog.get(e.item_id).title,
                         "score": e.score,
                         "sid": "".join(sv.sid_token(lvl, c)
                                        for lvl, c in enumerate(e.codes))}
                        for e in recs.entries]
            display = _render_text(result.text_tokens, rt.trie, rt.tokenizer,
                                   rt.catalog)
            payload["response_text"] = display
            if rt.debug:
                payload["tokens"] = list(result.tokens)
            session.history.append(HistoryEntry(
                role="user", text=body.text, model_text=body.text))
            session.history.append(HistoryEntry(
                role="assistant", text=display,
                item_id=payload.get("item_id"),
                model_text=result.text))
        return payload

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="ui")
    return app


def build_app_from_artifacts(model_path, sids_path, catalog_path, corpus_dir,
                             static_dir=None, beam_width: int = 50,
                             max_text_tokens: int = 40,
                             debug: bool = False) -> FastAPI:
    tokenizer, _, _, _ = load_corpus_dir(corpus_dir)
    model = toylm.load_lm(model_path,
                          expect_vocab_sha256=toylm.vocab_hash(tokenizer))
    trie = _load_trie(sids_path, catalog_path)
    catalog = load_catalog(catalog_path)
    runtime = Runtime(model=model, tokenizer=tokenizer, trie=trie,
                      catalog=catalog, beam_width=beam_width,
                      max_text_tokens=max_text_tokens, debug=debug)
    return create_app(runtime, static_dir=static_dir)
