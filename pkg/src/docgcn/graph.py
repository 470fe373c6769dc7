"""Document-level labelled multigraph and the edge-type parameter buckets.

Nodes are token indices. Five edge categories connect them: labelled
syntactic dependency arcs, coreference links, adjacent-sentence root
links, adjacent-word links, and self loops. Each edge type is mapped to
a parameter bucket (individually for frequent types, one shared RARE
bucket for the rest) and every bucket carries three direction slots.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .corpus import Document
from .errors import GraphBuildError

DEP = "dep"
COREF = "coref"
ADJ_SENT = "adj_sent"
ADJ_WORD = "adj_word"
SELF = "self"
CATEGORIES = (DEP, COREF, ADJ_SENT, ADJ_WORD, SELF)

FORWARD, REVERSE, SELF_DIR = 0, 1, 2
DIRECTIONS = (FORWARD, REVERSE, SELF_DIR)


class EdgeType(NamedTuple):
    category: str
    label: str | None = None  # only dependency edges carry a label

    def display(self) -> str:
        return f"{self.category}:{self.label}" if self.label else self.category


class Edge(NamedTuple):
    src: int
    dst: int
    etype: EdgeType


class Message(NamedTuple):
    """One directed contribution: node ``dst`` receives from node ``src``."""

    src: int
    dst: int
    etype: EdgeType
    direction: int


@dataclass(frozen=True)
class DocumentGraph:
    n: int
    edges: tuple[Edge, ...]

    def counts_by_category(self) -> dict[str, int]:
        counts = dict.fromkeys(CATEGORIES, 0)
        for e in self.edges:
            counts[e.etype.category] += 1
        return counts

    def messages(self) -> Iterator[Message]:
        """Every stored edge traversed both ways; self loops only once."""
        for src, dst, etype in self.edges:
            if etype.category == SELF:
                yield Message(src, dst, etype, SELF_DIR)
            else:
                yield Message(src, dst, etype, FORWARD)
                yield Message(dst, src, etype, REVERSE)

    def incidence(self) -> tuple[list[list[int]], list[list[int]], list[list[int]]]:
        """Per-node edge index lists split by traversal direction."""
        fwd: list[list[int]] = [[] for _ in range(self.n)]
        rev: list[list[int]] = [[] for _ in range(self.n)]
        self_: list[list[int]] = [[] for _ in range(self.n)]
        for i, (src, dst, etype) in enumerate(self.edges):
            if etype.category == SELF:
                self_[dst].append(i)
            else:
                fwd[dst].append(i)
                rev[src].append(i)
        return fwd, rev, self_


def build_graph(
    doc: Document,
    enabled: Iterable[str] | None = None,
    coref_clique: bool = False,
) -> DocumentGraph:
    """Construct the document graph using the enabled edge categories.

    Dependency arcs keep direction head -> dependent. Coreference links
    join the first tokens of consecutive chain spans (or every span pair
    when ``coref_clique`` is set). Ablation harnesses pass subsets of
    categories; an empty set is refused.
    """
    cats = set(CATEGORIES) if enabled is None else set(enabled)
    if not cats:
        raise GraphBuildError("at least one edge category must be enabled")
    unknown = cats - set(CATEGORIES)
    if unknown:
        raise GraphBuildError(f"unknown edge categories: {sorted(unknown)}")
    edges: list[Edge] = []
    if DEP in cats:
        for head, dep, label in doc.dep_arcs:
            edges.append(Edge(head, dep, EdgeType(DEP, label)))
    if ADJ_WORD in cats:
        t = EdgeType(ADJ_WORD)
        for lo, hi in doc.sentences:
            for i in range(lo, hi - 1):
                edges.append(Edge(i, i + 1, t))
    if SELF in cats:
        t = EdgeType(SELF)
        for i in range(doc.n):
            edges.append(Edge(i, i, t))
    if ADJ_SENT in cats:
        if len(doc.sentence_roots) != len(doc.sentences):
            raise GraphBuildError(
                f"document {doc.doc_id!r} lacks sentence roots for adjacent-sentence edges"
            )
        t = EdgeType(ADJ_SENT)
        for s in range(len(doc.sentences) - 1):
            edges.append(Edge(doc.sentence_roots[s], doc.sentence_roots[s + 1], t))
    if COREF in cats:
        t = EdgeType(COREF)
        for chain in doc.coref_chains:
            anchors = [span[0] for span in chain]
            if coref_clique:
                for i in range(len(anchors)):
                    for j in range(i + 1, len(anchors)):
                        edges.append(Edge(anchors[i], anchors[j], t))
            else:
                for i in range(len(anchors) - 1):
                    edges.append(Edge(anchors[i], anchors[i + 1], t))
    return DocumentGraph(n=doc.n, edges=tuple(edges))


class EdgeTypeVocabulary:
    """Frequency-ranked edge types mapped to parameter buckets.

    The ``top_n`` most frequent types get individual buckets; all other
    types share one RARE bucket. With ``pool="dep"`` only dependency
    labels compete for the top-N ranking and the four structural
    categories always keep their own buckets. Types unseen at fit time
    map to RARE at inference.
    """

    def __init__(self, ranked: Sequence[tuple[EdgeType, int]], top_n: int, pool: str = "all"):
        if top_n < 0:
            raise GraphBuildError(f"top_n must be >= 0, got {top_n}")
        if pool not in ("all", "dep"):
            raise GraphBuildError(f"unknown ranking pool {pool!r}")
        self.ranked = tuple((EdgeType(*t), int(c)) for t, c in ranked)
        self.top_n = top_n
        self.pool = pool
        self._buckets: dict[EdgeType, int] = {}
        next_bucket = 0
        rare_types: list[EdgeType] = []
        dep_rank = 0
        for etype, _ in self.ranked:
            if pool == "dep" and etype.category != DEP:
                own = True
            elif pool == "dep":
                own = dep_rank < top_n
                dep_rank += 1
            else:
                own = next_bucket < top_n
            if own:
                self._buckets[etype] = next_bucket
                next_bucket += 1
            else:
                rare_types.append(etype)
        self.rare_bucket: int | None = None
        if rare_types:
            self.rare_bucket = next_bucket
            for etype in rare_types:
                self._buckets[etype] = next_bucket
            next_bucket += 1
        self.n_buckets = next_bucket

    @property
    def n_slots(self) -> int:
        return self.n_buckets * len(DIRECTIONS)

    def bucket_of(self, etype: EdgeType) -> int | None:
        """Bucket id for a type; unseen types fall back to RARE (None if absent)."""
        bucket = self._buckets.get(etype)
        if bucket is None:
            return self.rare_bucket
        return bucket

    def slot_of(self, etype: EdgeType, direction: int) -> int | None:
        bucket = self.bucket_of(etype)
        if bucket is None:
            return None
        return bucket * len(DIRECTIONS) + direction

    def buckets_for_category(self, category: str) -> tuple[int, ...]:
        """All buckets holding at least one type of the category."""
        return tuple(sorted({
            b for t, b in self._buckets.items() if t.category == category
        }))

    def slots_for_category(self, category: str) -> tuple[int, ...]:
        return tuple(sorted(
            b * len(DIRECTIONS) + d
            for b in self.buckets_for_category(category)
            for d in DIRECTIONS
        ))

    def to_jsonable(self) -> dict:
        return {
            "ranked": [[t.category, t.label, c] for t, c in self.ranked],
            "top_n": self.top_n,
            "pool": self.pool,
        }

    @classmethod
    def from_jsonable(cls, payload: dict) -> "EdgeTypeVocabulary":
        ranked = [(EdgeType(cat, lbl), c) for cat, lbl, c in payload["ranked"]]
        return cls(ranked, payload["top_n"], payload["pool"])


def fit_vocabulary(
    graphs: Iterable[DocumentGraph], top_n: int, pool: str = "all"
) -> EdgeTypeVocabulary:
    """Rank edge types by training-set frequency and bucket them.

    Ties break by category name then label, lexicographically, so the
    result is independent of document order.
    """
    counts: Counter[EdgeType] = Counter()
    for g in graphs:
        for e in g.edges:
            counts[e.etype] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0].category, kv[0].label or ""))
    return EdgeTypeVocabulary(ranked, top_n, pool)


@dataclass(frozen=True)
class SlotGroup:
    slot: int
    src: np.ndarray  # int64 sender node indices
    dst: np.ndarray  # int64 receiver node indices


def group_messages(graph: DocumentGraph, vocab: EdgeTypeVocabulary) -> tuple[SlotGroup, ...]:
    """Bucket every directed message by parameter slot for the encoder.

    Messages whose type is unseen and has no RARE bucket are dropped (the
    model has no parameters for them).
    """
    by_slot: dict[int, tuple[list[int], list[int]]] = {}
    for msg in graph.messages():
        slot = vocab.slot_of(msg.etype, msg.direction)
        if slot is None:
            continue
        srcs, dsts = by_slot.setdefault(slot, ([], []))
        srcs.append(msg.src)
        dsts.append(msg.dst)
    return tuple(
        SlotGroup(
            slot=slot,
            src=np.asarray(by_slot[slot][0], dtype=np.int64),
            dst=np.asarray(by_slot[slot][1], dtype=np.int64),
        )
        for slot in sorted(by_slot)
    )


def edge_statistics(graphs: Sequence[DocumentGraph]) -> dict:
    """Corpus-level edge counts, used by the graph audit report."""
    per_category: Counter[str] = Counter()
    per_type: Counter[EdgeType] = Counter()
    for g in graphs:
        for e in g.edges:
            per_category[e.etype.category] += 1
            per_type[e.etype] += 1
    ranked = sorted(per_type.items(), key=lambda kv: (-kv[1], kv[0].category, kv[0].label or ""))
    return {
        "documents": len(graphs),
        "edges": sum(per_category.values()),
        "by_category": {c: per_category.get(c, 0) for c in CATEGORIES},
        "types_ranked": [[t.display(), c] for t, c in ranked],
    }
