"""Document data model, JSONL ingestion, entity merging, and candidate pairs.

Corpora arrive pre-parsed: tokens, sentence boundaries, dependency arcs,
sentence roots, coreference chains, entity mentions with KB ids, and gold
relations keyed by KB id. Parsing itself happens upstream of this package.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import CorpusParseError, IngestError, LabelError

log = logging.getLogger(__name__)

NO_RELATION = "no_relation"

Span = tuple[int, int]


@dataclass(frozen=True)
class Mention:
    span: Span
    entity_id: str
    kb_ids: tuple[str, ...]  # sorted, non-empty
    entity_type: str


@dataclass(frozen=True)
class Document:
    doc_id: str
    tokens: tuple[str, ...]
    sentences: tuple[Span, ...]
    dep_arcs: tuple[tuple[int, int, str], ...]  # (head, dependent, label)
    sentence_roots: tuple[int, ...]
    coref_chains: tuple[tuple[Span, ...], ...]
    mentions: tuple[Mention, ...]
    gold_relations: tuple[tuple[str, str, str], ...]  # (head id, tail id, label)

    @property
    def n(self) -> int:
        return len(self.tokens)

    def sentence_of(self, token: int) -> int:
        for s, (lo, hi) in enumerate(self.sentences):
            if lo <= token < hi:
                return s
        raise IngestError(f"token index {token} outside all sentences", self.doc_id)

    def entities(self) -> dict[str, tuple[Mention, ...]]:
        """Mentions grouped by entity_id, keys sorted for determinism."""
        groups: dict[str, list[Mention]] = {}
        for m in self.mentions:
            groups.setdefault(m.entity_id, []).append(m)
        return {eid: tuple(groups[eid]) for eid in sorted(groups)}


@dataclass(frozen=True)
class PairInstance:
    doc_id: str
    head_entity_id: str
    tail_entity_id: str
    label: int  # index into the relation vocabulary, 0 = no relation
    head_token_set: tuple[int, ...]
    tail_token_set: tuple[int, ...]
    head_mention_spans: tuple[Span, ...]
    tail_mention_spans: tuple[Span, ...]


@dataclass
class IngestStats:
    documents: int = 0
    dropped_mentions: int = 0
    dropped_self_relations: int = 0
    dropped_by_doc: dict[str, int] | None = None

    def __post_init__(self):
        if self.dropped_by_doc is None:
            self.dropped_by_doc = {}


def validate_document(doc: Document) -> None:
    """Check every structural invariant; raises IngestError naming the doc."""
    n = doc.n
    if not doc.sentences:
        raise IngestError("document has no sentences", doc.doc_id)
    cursor = 0
    for lo, hi in doc.sentences:
        if lo != cursor or hi <= lo:
            raise IngestError(
                f"sentences must partition [0,{n}) in order, got range [{lo},{hi}) at {cursor}",
                doc.doc_id,
            )
        cursor = hi
    if cursor != n:
        raise IngestError(f"sentences cover [0,{cursor}) but document has {n} tokens", doc.doc_id)
    if len(doc.sentence_roots) != len(doc.sentences):
        raise IngestError(
            f"{len(doc.sentence_roots)} roots for {len(doc.sentences)} sentences", doc.doc_id
        )
    for s, root in enumerate(doc.sentence_roots):
        lo, hi = doc.sentences[s]
        if not lo <= root < hi:
            raise IngestError(f"root {root} outside sentence {s} [{lo},{hi})", doc.doc_id)
    for head, dep, _ in doc.dep_arcs:
        if not (0 <= head < n and 0 <= dep < n):
            raise IngestError(f"dep arc ({head},{dep}) out of bounds", doc.doc_id)
        if doc.sentence_of(head) != doc.sentence_of(dep):
            raise IngestError(f"dep arc ({head},{dep}) crosses a sentence boundary", doc.doc_id)
    for chain in doc.coref_chains:
        for lo, hi in chain:
            if not (0 <= lo < hi <= n):
                raise IngestError(f"coref span [{lo},{hi}) out of bounds", doc.doc_id)
    kb_seen: set[str] = set()
    for m in doc.mentions:
        lo, hi = m.span
        if not (0 <= lo < hi <= n):
            raise IngestError(f"mention span [{lo},{hi}) out of bounds", doc.doc_id)
        if not m.kb_ids:
            raise IngestError("ungrounded mention survived ingest", doc.doc_id)
        kb_seen.update(m.kb_ids)
    for head_id, tail_id, _ in doc.gold_relations:
        if head_id == tail_id:
            raise IngestError(f"self-relation on {head_id!r} present", doc.doc_id)
        for ref in (head_id, tail_id):
            if ref not in kb_seen:
                raise IngestError(f"relation references unknown id {ref!r}", doc.doc_id)


def _field(record: dict, name: str, line: int):
    if name not in record:
        raise CorpusParseError("missing field", line, name)
    return record[name]


def _span(value, line: int, field: str) -> Span:
    if not (isinstance(value, (list, tuple)) and len(value) == 2
            and all(isinstance(v, int) for v in value)):
        raise CorpusParseError(f"expected [start, end) pair, got {value!r}", line, field)
    return (value[0], value[1])


def document_from_record(record: dict, line: int = 0) -> tuple[Document, int, int]:
    """Build a Document from one JSONL record.

    Returns (document, dropped_mention_count, dropped_self_relation_count);
    ungrounded mentions and self-relations are dropped per preprocessing rules.
    """
    if not isinstance(record, dict):
        raise CorpusParseError("record is not an object", line)
    doc_id = _field(record, "doc_id", line)
    if not isinstance(doc_id, str):
        raise CorpusParseError("doc_id must be a string", line, "doc_id")
    tokens = _field(record, "tokens", line)
    if not (isinstance(tokens, list) and all(isinstance(t, str) for t in tokens)):
        raise CorpusParseError("tokens must be an array of strings", line, "tokens")
    sentences = tuple(_span(s, line, "sentences") for s in _field(record, "sentences", line))
    roots = _field(record, "roots", line)
    if not (isinstance(roots, list) and all(isinstance(r, int) for r in roots)):
        raise CorpusParseError("roots must be an array of token indices", line, "roots")
    deps = []
    for arc in _field(record, "deps", line):
        if not (isinstance(arc, list) and len(arc) == 3 and isinstance(arc[0], int)
                and isinstance(arc[1], int) and isinstance(arc[2], str)):
            raise CorpusParseError(f"bad dep arc {arc!r}", line, "deps")
        deps.append((arc[0], arc[1], arc[2]))
    coref = tuple(
        tuple(_span(span, line, "coref") for span in chain)
        for chain in _field(record, "coref", line)
    )
    mentions = []
    dropped = 0
    for m in _field(record, "mentions", line):
        if not isinstance(m, dict):
            raise CorpusParseError("mention must be an object", line, "mentions")
        span = _span(_field(m, "span", line), line, "mentions.span")
        kb_ids = m.get("kb_ids", [])
        if not (isinstance(kb_ids, list) and all(isinstance(k, str) for k in kb_ids)):
            raise CorpusParseError("kb_ids must be an array of strings", line, "mentions.kb_ids")
        if not kb_ids:
            dropped += 1  # not grounded to any KB id
            continue
        kb_sorted = tuple(sorted(set(kb_ids)))
        mentions.append(
            Mention(span=span, entity_id=kb_sorted[0], kb_ids=kb_sorted,
                    entity_type=str(m.get("type", "")))
        )
    relations = []
    dropped_self = 0
    for r in _field(record, "relations", line):
        if not isinstance(r, dict):
            raise CorpusParseError("relation must be an object", line, "relations")
        head = _field(r, "head_kb", line)
        tail = _field(r, "tail_kb", line)
        label = _field(r, "label", line)
        if head == tail:
            dropped_self += 1
            continue
        relations.append((str(head), str(tail), str(label)))
    doc = Document(
        doc_id=doc_id,
        tokens=tuple(tokens),
        sentences=sentences,
        dep_arcs=tuple(deps),
        sentence_roots=tuple(roots),
        coref_chains=coref,
        mentions=tuple(mentions),
        gold_relations=tuple(relations),
    )
    validate_document(doc)
    return doc, dropped, dropped_self


def ingest_jsonl(path: str | Path) -> tuple[list[Document], IngestStats]:
    """Read one document per line, validating and dropping per the rules."""
    stats = IngestStats()
    docs: list[Document] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(f"invalid JSON: {exc.msg}", lineno) from exc
            doc, dropped, dropped_self = document_from_record(record, lineno)
            docs.append(doc)
            stats.documents += 1
            stats.dropped_mentions += dropped
            stats.dropped_self_relations += dropped_self
            if dropped:
                stats.dropped_by_doc[doc.doc_id] = dropped
                log.warning("document %s: dropped %d ungrounded mention(s)", doc.doc_id, dropped)
    return docs, stats


def document_to_record(doc: Document) -> dict:
    return {
        "doc_id": doc.doc_id,
        "tokens": list(doc.tokens),
        "sentences": [list(s) for s in doc.sentences],
        "roots": list(doc.sentence_roots),
        "deps": [[h, d, lbl] for h, d, lbl in doc.dep_arcs],
        "coref": [[list(span) for span in chain] for chain in doc.coref_chains],
        "mentions": [
            {"span": list(m.span), "kb_ids": list(m.kb_ids), "type": m.entity_type}
            for m in doc.mentions
        ],
        "relations": [
            {"head_kb": h, "tail_kb": t, "label": lbl} for h, t, lbl in doc.gold_relations
        ],
    }


def write_jsonl(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(document_to_record(doc), sort_keys=True,
                                separators=(",", ":")) + "\n")


class _UnionFind:
    def __init__(self, size: int):
        self.parent = list(range(size))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def merge_entities(doc: Document) -> Document:
    """Group mentions into entities by transitive closure of shared KB ids.

    Each group's entity id becomes its lexicographically smallest KB id.
    Relations are rewritten onto entity ids; relations that collapse onto a
    single entity are removed (self-relations).
    """
    uf = _UnionFind(len(doc.mentions))
    owner: dict[str, int] = {}
    for i, m in enumerate(doc.mentions):
        for kb in m.kb_ids:
            if kb in owner:
                uf.union(owner[kb], i)
            else:
                owner[kb] = i
    group_kb: dict[int, list[str]] = {}
    for i, m in enumerate(doc.mentions):
        group_kb.setdefault(uf.find(i), []).extend(m.kb_ids)
    entity_of_group = {g: min(kbs) for g, kbs in group_kb.items()}
    kb_to_entity = {}
    for g, kbs in group_kb.items():
        for kb in kbs:
            kb_to_entity[kb] = entity_of_group[g]
    mentions = tuple(
        replace(m, entity_id=entity_of_group[uf.find(i)]) for i, m in enumerate(doc.mentions)
    )
    relations: list[tuple[str, str, str]] = []
    seen: set[tuple[str, str, str]] = set()
    for head, tail, label in doc.gold_relations:
        if head not in kb_to_entity or tail not in kb_to_entity:
            raise IngestError(f"relation references unknown id {head!r} or {tail!r}", doc.doc_id)
        resolved = (kb_to_entity[head], kb_to_entity[tail], label)
        if resolved[0] == resolved[1]:
            continue  # became a self-relation after merging
        if resolved not in seen:
            seen.add(resolved)
            relations.append(resolved)
    return replace(doc, mentions=mentions, gold_relations=tuple(relations))


PairFilter = Callable[[Document, str, str], bool]


def _entity_tokens(mentions: Sequence[Mention]) -> tuple[int, ...]:
    out: set[int] = set()
    for m in mentions:
        out.update(range(m.span[0], m.span[1]))
    return tuple(sorted(out))


def generate_pairs(
    doc: Document,
    relation_vocab: Sequence[str],
    mode: str = "bidirectional",
    filter_hook: PairFilter | None = None,
    pair_types: tuple[str, str] | None = None,
) -> list[PairInstance]:
    """Candidate entity pairs with gold labels attached.

    ``bidirectional`` emits both orderings of every entity pair (the
    reactant/product style task); ``undirected`` emits one per unordered
    pair and matches gold labels in either direction. ``filter_hook`` is
    the pluggable pair filter (return True to keep); ``pair_types``
    optionally restricts pairs to (head type, tail type).
    """
    if mode not in ("bidirectional", "undirected"):
        raise LabelError(f"unknown pair mode {mode!r}")
    if relation_vocab[0] != NO_RELATION:
        raise LabelError(f"relation vocabulary must reserve index 0 for {NO_RELATION!r}")
    label_index = {lbl: i for i, lbl in enumerate(relation_vocab)}
    gold: dict[tuple[str, str], int] = {}
    for head, tail, label in doc.gold_relations:
        if label not in label_index:
            raise LabelError(f"gold label {label!r} not in relation vocabulary")
        gold[(head, tail)] = label_index[label]
    entities = doc.entities()
    ids = sorted(entities)
    if mode == "bidirectional":
        ordered = [(a, b) for a in ids for b in ids if a != b]
    else:
        ordered = [(a, b) for i, a in enumerate(ids) for b in ids[i + 1:]]
    pairs: list[PairInstance] = []
    for head, tail in ordered:
        if pair_types is not None:
            head_type = entities[head][0].entity_type
            tail_type = entities[tail][0].entity_type
            if (head_type, tail_type) != pair_types:
                continue
        if filter_hook is not None and not filter_hook(doc, head, tail):
            continue
        label = gold.get((head, tail), 0)
        if mode == "undirected" and label == 0:
            label = gold.get((tail, head), 0)
        pairs.append(
            PairInstance(
                doc_id=doc.doc_id,
                head_entity_id=head,
                tail_entity_id=tail,
                label=label,
                head_token_set=_entity_tokens(entities[head]),
                tail_token_set=_entity_tokens(entities[tail]),
                head_mention_spans=tuple(m.span for m in entities[head]),
                tail_mention_spans=tuple(m.span for m in entities[tail]),
            )
        )
    return pairs


def load_corpus(path: str | Path) -> tuple[list[Document], IngestStats]:
    """Ingest a JSONL corpus and merge entities in every document."""
    docs, stats = ingest_jsonl(path)
    return [merge_entities(d) for d in docs], stats
