"""Immutable temporal knowledge-graph store.

Edges are timestamped (subject, predicate, value) facts with a vector
embedding per value. The store is append-only while loading and read-only
afterwards; per-concept indices are kept sorted by (t, id) so supersession
chains are deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from .errors import DataError

VALUE_KINDS = ("numeric", "categorical", "text")


@dataclass(slots=True)
class Value:
    kind: str
    raw: str
    embedding: np.ndarray


@dataclass(slots=True)
class Edge:
    id: int
    subject: str
    predicate: str
    value: Value
    t: float
    context: Optional[str] = None
    entity: Optional[str] = None

    @property
    def concept(self) -> tuple[str, str]:
        return (self.subject, self.predicate)


def embed_distance(a, b, metric: str = "euclidean") -> float:
    """Distance between two value embeddings (or raw vectors).

    Euclidean by default; "cosine" returns 1 - cos(a, b) for text-derived
    corpora. Raises DataError on dimension mismatch.
    """
    va = a.embedding if isinstance(a, Value) else np.asarray(a, dtype=float)
    vb = b.embedding if isinstance(b, Value) else np.asarray(b, dtype=float)
    if va.shape != vb.shape:
        raise DataError(f"embedding dimension mismatch: {va.shape} vs {vb.shape}")
    if metric == "euclidean":
        return float(np.linalg.norm(va - vb))
    if metric == "cosine":
        na = np.linalg.norm(va)
        nb = np.linalg.norm(vb)
        if na == 0.0 or nb == 0.0:
            return 1.0
        return float(1.0 - np.dot(va, vb) / (na * nb))
    raise DataError(f"unknown metric {metric!r}")


class EdgeStore:
    """Read-only edge collection with (subject, predicate) and predicate indices."""

    def __init__(self, edges: Iterable[Edge], window: Optional[tuple[float, float]] = None):
        self.edges: list[Edge] = list(edges)
        self._by_concept: dict[tuple[str, str], list[Edge]] = {}
        self._by_predicate: dict[str, list[Edge]] = {}
        self._by_subject: dict[str, list[Edge]] = {}
        for e in self.edges:
            self._by_concept.setdefault(e.concept, []).append(e)
            self._by_predicate.setdefault(e.predicate, []).append(e)
            self._by_subject.setdefault(e.subject, []).append(e)
        for idx in (self._by_concept, self._by_predicate, self._by_subject):
            for lst in idx.values():
                lst.sort(key=lambda e: (e.t, e.id))
        if window is not None:
            self.window: Optional[tuple[float, float]] = (float(window[0]), float(window[1]))
        elif self.edges:
            ts = [e.t for e in self.edges]
            self.window = (min(ts), max(ts))
        else:
            self.window = None

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self) -> Iterator[Edge]:
        return iter(self.edges)

    @property
    def t_now(self) -> float:
        if self.window is None:
            raise DataError("store window undefined (empty store, no override)")
        return self.window[1]

    def concepts(self) -> list[tuple[str, str]]:
        return sorted(self._by_concept.keys())

    def subjects(self) -> list[str]:
        return sorted(self._by_subject.keys())

    def predicates(self) -> list[str]:
        return sorted(self._by_predicate.keys())

    def history(self, subject: str, predicate: str) -> list[Edge]:
        return list(self._by_concept.get((subject, predicate), []))

    def predicate_edges(self, predicate: str) -> list[Edge]:
        return list(self._by_predicate.get(predicate, []))

    def subject_edges(self, subject: str) -> list[Edge]:
        return list(self._by_subject.get(subject, []))

    @property
    def embed_dim(self) -> Optional[int]:
        if not self.edges:
            return None
        return int(self.edges[0].value.embedding.shape[0])


def concept_history(store: EdgeStore, subject: str, predicate: str) -> list[Edge]:
    """All edges of a concept sorted ascending by (t, id); empty if unknown."""
    return store.history(subject, predicate)


def _parse_line(obj: dict, lineno: int, edge_id: int) -> Edge:
    try:
        subject = str(obj["subject"])
        predicate = str(obj["predicate"])
        kind = obj.get("value_kind", "text")
        raw = str(obj["value"])
        emb = np.asarray(obj["embedding"], dtype=float)
        t = float(obj["t"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"line {lineno}: malformed edge record ({exc})") from exc
    if kind not in VALUE_KINDS:
        raise DataError(f"line {lineno}: unknown value_kind {kind!r}")
    if emb.ndim != 1 or emb.size == 0 or not np.all(np.isfinite(emb)):
        raise DataError(f"line {lineno}: embedding must be a finite 1-d vector")
    if not math.isfinite(t):
        raise DataError(f"line {lineno}: non-finite timestamp")
    context = obj.get("context")
    entity = obj.get("entity", subject)
    return Edge(
        id=edge_id,
        subject=subject,
        predicate=predicate,
        value=Value(kind=kind, raw=raw, embedding=emb),
        t=t,
        context=None if context is None else str(context),
        entity=str(entity),
    )


def load_edges(path, fmt: str = "jsonl", window: Optional[tuple[float, float]] = None) -> EdgeStore:
    """Load a JSONL edge file into an EdgeStore.

    One JSON object per line with keys: subject, predicate, value_kind,
    value, embedding, t, optional context, optional entity (defaults to
    subject). Edge ids are assigned by line order, which makes loading
    deterministic.
    """
    if fmt != "jsonl":
        raise DataError(f"unsupported format {fmt!r}")
    edges: list[Edge] = []
    dim: Optional[int] = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON ({exc})") from exc
            edge = _parse_line(obj, lineno, edge_id=len(edges))
            d = edge.value.embedding.shape[0]
            if dim is None:
                dim = d
            elif d != dim:
                raise DataError(f"line {lineno}: embedding dimension {d} != {dim}")
            edges.append(edge)
    return EdgeStore(edges, window=window)


def write_edges(edges: Iterable[Edge], path, float_digits: int = 6) -> int:
    """Write edges as JSONL in iteration order. Returns the line count."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for e in edges:
            obj = {
                "subject": e.subject,
                "predicate": e.predicate,
                "value_kind": e.value.kind,
                "value": e.value.raw,
                "embedding": [round(float(x), float_digits) for x in e.value.embedding],
                "t": round(float(e.t), float_digits),
            }
            if e.context is not None:
                obj["context"] = e.context
            if e.entity is not None and e.entity != e.subject:
                obj["entity"] = e.entity
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")
            n += 1
    return n
