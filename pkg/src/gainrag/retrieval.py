"""Exact nearest-neighbour scenario retrieval with tie and threshold rejection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .embedding import DIM, Embedder, HashingEmbedder
from .impedance import ImpedancePayload, fallback_payload
from .scenario_db import ScenarioDatabase

TIE_EPS = 1e-12


@dataclass(frozen=True)
class RetrievalConfig:
    distance_threshold: float = 0.9
    tie_margin: float = 0.02

    def __post_init__(self):
        if not self.distance_threshold > 0:
            raise ValueError("distance_threshold must be positive")
        if not 0 < self.tie_margin < 1:
            raise ValueError("tie_margin must lie in (0, 1)")


@dataclass(frozen=True)
class ScenarioIndex:
    vectors: np.ndarray  # (n_records, DIM)
    db: ScenarioDatabase

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class RetrievalResult:
    kind: str  # "match" | "fallback"
    record_index: int | None
    distance: float
    runner_up_distance: float | None
    reason: str  # ok | tie | low_confidence | empty_db
    # (index, distance) of the closest few candidates, nearest first
    candidates: tuple[tuple[int, float], ...] = field(default=(), compare=False)

    @property
    def is_match(self) -> bool:
        return self.kind == "match"


def build_index(db: ScenarioDatabase, embedder: Embedder | None = None) -> ScenarioIndex:
    embedder = embedder or HashingEmbedder()
    vecs = embedder.embed_all([r.description for r in db.records])
    arr = np.vstack(vecs) if vecs else np.zeros((0, embedder.dimension))
    arr.setflags(write=False)
    return ScenarioIndex(vectors=arr, db=db)


def distances(index: ScenarioIndex, query: np.ndarray) -> np.ndarray:
    query = np.asarray(query, dtype=float)
    if query.shape != (index.vectors.shape[1] if len(index) else DIM,):
        raise ValueError(f"query must have shape ({index.vectors.shape[1] if len(index) else DIM},), got {query.shape}")
    diff = index.vectors - query
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def retrieve(index: ScenarioIndex, query: np.ndarray, cfg: RetrievalConfig | None = None,
             top_k: int = 3) -> RetrievalResult:
    """Full linear scan; the best candidate is accepted only if it is close and unambiguous."""
    cfg = cfg or RetrievalConfig()
    d = distances(index, query)
    if d.size == 0:
        return RetrievalResult("fallback", None, math.inf, None, "empty_db")
    # stable sort so equal distances resolve to the lower index
    order = np.argsort(d, kind="stable")
    cands = tuple((int(i), float(d[i])) for i in order[:top_k])
    best_i = int(order[0])
    best = float(d[best_i])
    runner = float(d[order[1]]) if d.size > 1 else None

    if best > cfg.distance_threshold:
        return RetrievalResult("fallback", best_i, best, runner, "low_confidence", cands)
    if runner is not None and (runner - best) / max(best, TIE_EPS) < cfg.tie_margin:
        return RetrievalResult("fallback", best_i, best, runner, "tie", cands)
    return RetrievalResult("match", best_i, best, runner, "ok", cands)


def format_payload(result: RetrievalResult, db: ScenarioDatabase,
                   fallback: ImpedancePayload | None = None) -> ImpedancePayload:
    if result.kind == "match":
        i = result.record_index
        if i is None or not 0 <= i < len(db):
            raise IndexError(f"record index {i} out of range for database of {len(db)} records")
        return ImpedancePayload.from_record(db[i], reason="ok")
    base = fallback or fallback_payload()
    return base.with_reason(result.reason)
