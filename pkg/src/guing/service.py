"""HTTP facade: live search, blind multi-engine comparison, live metrics.

Engine provenance for comparison slots stays server-side until a submission
lands; clients only ever see slot ids and screenshot ids beforehand. All
judgment state is persisted append-only as JSONL, so a restarted service
reproduces its metrics exactly from the logs.
"""

from __future__ import annotations

import json
import re
import secrets
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from pydantic import BaseModel

from . import gateway
from .errors import EncoderUnreachable
from .evaluation import aggregate_judgments, metrics_table, single_list_metrics
from .index import (
    ExactIndex,
    IvfIndex,
    build_exact,
    build_ivf,
    default_ivf_params,
    kmeans,
    load_index,
    search_exact,
    search_ivf,
)
from .pipeline import read_scap_repo

DEFAULT_KS = (1, 3, 5, 10)
MAX_K = 100

SESSIONS_LOG = "sessions.jsonl"
SUBMISSIONS_LOG = "submissions.jsonl"


class SearchEngine(Protocol):
    def search(self, query: str, k: int) -> list[tuple[str, float]]: ...


@dataclass
class VectorEngine:
    """Encoder plus index; nprobe=None means exact (or full-probe) search."""

    index: ExactIndex | IvfIndex
    encoder: gateway.EncoderClient
    nprobe: int | None = None

    def search(self, query: str, k: int) -> list[tuple[str, float]]:
        emb = self.encoder.encode_text(query)
        if isinstance(self.index, IvfIndex):
            nprobe = self.nprobe if self.nprobe is not None else self.index.n_cells
            return search_ivf(self.index, emb, k, nprobe).results
        return search_exact(self.index, emb, k).results


def _tokens(text: str) -> set[str]:
    return set(re.findall(r"[a-z0-9]+", text.lower()))


@dataclass
class KeywordEngine:
    """Caption token-overlap contrast engine.

    Always returns min(k, corpus) results so comparison sessions keep their
    slot arithmetic; unmatched candidates rank by id with score 0.
    """

    corpus: list[tuple[str, str]]  # (screenshot_id, caption)

    def search(self, query: str, k: int) -> list[tuple[str, float]]:
        q = _tokens(query)
        scored = []
        for sid, caption in self.corpus:
            overlap = len(q & _tokens(caption))
            scored.append((sid, overlap / len(q) if q else 0.0))
        scored.sort(key=lambda t: (-t[1], t[0]))
        return scored[:k]


@dataclass
class Slot:
    slot_id: str
    screenshot_id: str
    engine_id: str  # hidden from clients until submission
    rank: int       # 1-based rank within the contributing engine


@dataclass
class Session:
    session_id: str
    query: str
    k: int
    engine_ids: list[str]
    shuffle_seed: int
    slots: list[Slot]
    submitted_by: dict[str, list[str]] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "query": self.query,
            "k": self.k,
            "engine_ids": self.engine_ids,
            "shuffle_seed": self.shuffle_seed,
            "slots": [
                {"slot_id": s.slot_id, "screenshot_id": s.screenshot_id,
                 "engine_id": s.engine_id, "rank": s.rank}
                for s in self.slots
            ],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Session":
        return cls(
            session_id=d["session_id"], query=d["query"], k=d["k"],
            engine_ids=list(d["engine_ids"]), shuffle_seed=d["shuffle_seed"],
            slots=[Slot(**s) for s in d["slots"]],
        )


class SearchRequest(BaseModel):
    query: str
    engine: str
    k: int = 10


class CompareRequest(BaseModel):
    query: str
    engines: list[str]
    k: int = 10
    seed: int | None = None


class SubmitRequest(BaseModel):
    selected_slot_ids: list[str]
    evaluator_id: str


def _image_url(screenshot_id: str) -> str:
    return f"/images/{screenshot_id}.png"


def _append_jsonl(path: Path, obj: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, sort_keys=True) + "\n")


def _load_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def create_app(engines: dict[str, SearchEngine], data_dir, image_dir=None) -> FastAPI:
    """Build the service over registered engines, replaying any existing logs."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    sessions_path = data_dir / SESSIONS_LOG
    submissions_path = data_dir / SUBMISSIONS_LOG

    sessions: dict[str, Session] = {}
    for row in _load_jsonl(sessions_path):
        s = Session.from_json_dict(row)
        sessions[s.session_id] = s
    submissions: list[dict] = _load_jsonl(submissions_path)
    for sub in submissions:
        sess = sessions.get(sub["session_id"])
        if sess is not None:
            sess.submitted_by[sub["evaluator_id"]] = list(sub["selected_slot_ids"])

    write_lock = threading.Lock()
    app = FastAPI(title="guing service")

    if image_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/images", StaticFiles(directory=str(image_dir)), name="images")

    def run_engine(engine_id: str, query: str, k: int) -> list[tuple[str, float]]:
        engine = engines.get(engine_id)
        if engine is None:
            raise HTTPException(status_code=404, detail=f"unknown engine {engine_id!r}")
        try:
            return engine.search(query, k)
        except EncoderUnreachable as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc

    @app.post("/search")
    def search(req: SearchRequest):
        if not req.query.strip():
            raise HTTPException(status_code=422, detail="empty query")
        if not 1 <= req.k <= MAX_K:
            raise HTTPException(status_code=422, detail=f"k must be in [1, {MAX_K}]")
        results = run_engine(req.engine, req.query, req.k)
        return {
            "results": [
                {"id": sid, "score": score, "image_url": _image_url(sid)}
                for sid, score in results
            ]
        }

    @app.post("/compare")
    def compare(req: CompareRequest):
        if not req.query.strip():
            raise HTTPException(status_code=422, detail="empty query")
        if not 1 <= req.k <= MAX_K:
            raise HTTPException(status_code=422, detail=f"k must be in [1, {MAX_K}]")
        if len(req.engines) < 2:
            raise HTTPException(status_code=422, detail="need at least 2 engines to compare")
        if len(set(req.engines)) != len(req.engines):
            raise HTTPException(status_code=422, detail="duplicate engine ids")

        pooled: list[tuple[str, str, int]] = []  # (engine_id, screenshot_id, rank)
        for engine_id in req.engines:
            for rank, (sid, _score) in enumerate(run_engine(engine_id, req.query, req.k), start=1):
                pooled.append((engine_id, sid, rank))

        seed = req.seed if req.seed is not None else secrets.randbits(32)
        order = np.random.default_rng(seed).permutation(len(pooled))
        slots = [
            Slot(slot_id=f"slot-{pos:03d}", screenshot_id=pooled[int(i)][1],
                 engine_id=pooled[int(i)][0], rank=pooled[int(i)][2])
            for pos, i in enumerate(order)
        ]
        session = Session(
            session_id=secrets.token_urlsafe(16), query=req.query, k=req.k,
            engine_ids=list(req.engines), shuffle_seed=seed, slots=slots,
        )
        with write_lock:
            sessions[session.session_id] = session
            _append_jsonl(sessions_path, session.to_json_dict())
        return {
            "session_id": session.session_id,
            "query": session.query,
            "slots": [
                {"slot_id": s.slot_id, "screenshot_id": s.screenshot_id,
                 "image_url": _image_url(s.screenshot_id)}
                for s in session.slots
            ],
        }

    @app.post("/sessions/{session_id}/submit")
    def submit(session_id: str, req: SubmitRequest):
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        if not req.evaluator_id.strip():
            raise HTTPException(status_code=422, detail="empty evaluator_id")
        known = {s.slot_id for s in session.slots}
        unknown = [sid for sid in req.selected_slot_ids if sid not in known]
        if unknown:
            raise HTTPException(status_code=422, detail=f"unknown slots {unknown}")

        with write_lock:
            if req.evaluator_id in session.submitted_by:
                raise HTTPException(status_code=409,
                                    detail=f"evaluator {req.evaluator_id!r} already submitted")
            selected = set(req.selected_slot_ids)
            engines_payload: dict[str, dict] = {}
            for engine_id in session.engine_ids:
                own = sorted((s for s in session.slots if s.engine_id == engine_id),
                             key=lambda s: s.rank)
                engines_payload[engine_id] = {
                    "ranked_ids": [s.screenshot_id for s in own],
                    "relevant_ids": sorted({s.screenshot_id for s in own
                                            if s.slot_id in selected}),
                }
            record = {
                "session_id": session.session_id,
                "query": session.query,
                "evaluator_id": req.evaluator_id,
                "selected_slot_ids": sorted(selected),
                "engines": engines_payload,
            }
            session.submitted_by[req.evaluator_id] = sorted(selected)
            submissions.append(record)
            _append_jsonl(submissions_path, record)

        per_engine = {
            engine_id: single_list_metrics(p["ranked_ids"], p["relevant_ids"], DEFAULT_KS)
            for engine_id, p in record["engines"].items()
        }
        return {"ack": True, "per_engine_metrics": per_engine}

    @app.get("/metrics")
    def metrics(engine: str | None = Query(default=None)):
        if not submissions:
            raise HTTPException(status_code=404, detail="no submitted sessions")
        tables = aggregate_judgments(submissions, DEFAULT_KS)
        if engine is not None:
            if engine not in tables:
                raise HTTPException(status_code=404, detail=f"no data for engine {engine!r}")
            tables = {engine: tables[engine]}
        return {"engines": tables, "table": metrics_table(tables, DEFAULT_KS)}

    return app


def build_engines_from_registry(path) -> dict[str, SearchEngine]:
    """Engine registry: a JSON list of engine definitions.

    {"engine_id": "vec", "type": "vector", "embeddings": "repo.emb",
     "cells": 64, "nprobe": 8, "encoder": "stub", "dim": 512, "seed": 0}
    {"engine_id": "vec2", "type": "vector", "index": "snapshot.idx", ...}
    {"engine_id": "kw", "type": "keyword", "captions": "scap.jsonl"}

    Vector engines either load a prebuilt index snapshot ("index") or build
    one from an embedding file ("embeddings", optional "cells"/"nprobe").
    Encoder "stub" is the deterministic offline encoder; {"encoder": "http",
    "base_url": ...} proxies to a sidecar.
    """
    with open(path, "r", encoding="utf-8") as fh:
        defs = json.load(fh)
    engines: dict[str, SearchEngine] = {}
    for item in defs:
        engine_id = item["engine_id"]
        if engine_id in engines:
            raise ValueError(f"duplicate engine_id {engine_id!r}")
        kind = item.get("type", "vector")
        if kind == "keyword":
            records = read_scap_repo(item["captions"])
            engines[engine_id] = KeywordEngine(corpus=[(r.entry_id, r.caption) for r in records])
            continue
        if kind != "vector":
            raise ValueError(f"unknown engine type {kind!r}")
        if item.get("encoder", "stub") == "http":
            encoder: gateway.EncoderClient = gateway.HttpEncoderClient(item["base_url"])
        else:
            encoder = gateway.StubEncoderClient(dim=item.get("dim", 512), seed=item.get("seed", 0))
        if "index" in item:
            index = load_index(item["index"])
        else:
            vectors = gateway.load_embeddings(item["embeddings"])
            base = build_exact(vectors)
            cells = item.get("cells")
            if cells is None:
                cells, _ = default_ivf_params(base.count)
            if cells > 1:
                centroids = kmeans(base, cells, seed=item.get("seed", 0))
                index = build_ivf(base, centroids)
            else:
                index = base
        engines[engine_id] = VectorEngine(index=index, encoder=encoder, nprobe=item.get("nprobe"))
    return engines
