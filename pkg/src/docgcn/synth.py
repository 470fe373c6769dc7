"""Deterministic synthetic distant-supervision corpus generator.

A toy KB supplies entities (with KB ids and alias surface forms) and
relation triples; documents are then generated from templates so that
every structural property is controllable: the fraction of positive
pairs whose mentions never share a sentence (``pct_inter``) and the
fraction resolvable only through a planted alias coreference link
(``pct_coref_only``).

Coreference-dependent documents are built to be unsolvable without the
coreference edge: the true head entity and a distractor entity appear
with the *same* surface form in one sentence (in random order), the
relation evidence sits in another sentence whose subject is an alias
token, and only the coreference chain ties that alias to the true head
mention. Word identity, token position, and sentence adjacency are all
symmetric between the head and the distractor by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

ARC_LABELS = ("nsubj", "dobj", "amod", "prep")
RELATION_LABEL = "interacts"


@dataclass(frozen=True)
class KbEntity:
    entity_id: str
    kb_ids: tuple[str, ...]  # primary first; optional alternate id
    aliases: tuple[str, ...]  # (surface form, alias surface form)


@dataclass(frozen=True)
class ToyKB:
    entities: tuple[KbEntity, ...]
    triples: tuple[tuple[str, str, str], ...]  # (head entity, tail entity, label)

    def entity(self, entity_id: str) -> KbEntity:
        for e in self.entities:
            if e.entity_id == entity_id:
                return e
        raise KeyError(entity_id)

    def related(self, a: str, b: str) -> bool:
        return any({h, t} == {a, b} or (h, t) in ((a, b), (b, a))
                   for h, t, _ in self.triples)

    def to_jsonable(self) -> dict:
        return {
            "entities": [
                {"id": e.entity_id, "kb_ids": list(e.kb_ids), "aliases": list(e.aliases)}
                for e in self.entities
            ],
            "triples": [list(t) for t in self.triples],
        }


def gen_kb(n_entities: int, n_triples: int, seed: int,
           relation_label: str = RELATION_LABEL,
           exclude_reverse: bool = False) -> ToyKB:
    """Sample a deterministic toy KB: triples drawn without replacement.

    ``exclude_reverse`` keeps at most one direction per entity pair,
    which yields cleaner distant-supervision corpora.
    """
    if n_entities < 2 and n_triples > 0:
        raise ConfigError("need at least 2 entities to form triples")
    limit = n_entities * (n_entities - 1)
    if exclude_reverse:
        limit //= 2
    if n_triples > limit:
        raise ConfigError(
            f"cannot sample {n_triples} distinct triples from {n_entities} entities"
            f" (max {limit})"
        )
    rng = np.random.default_rng(seed)
    entities = []
    for i in range(n_entities):
        primary = f"K{i:03d}"
        kb_ids = (primary, f"{primary}x") if rng.random() < 0.3 else (primary,)
        entities.append(KbEntity(
            entity_id=f"E{i:03d}",
            kb_ids=kb_ids,
            aliases=(f"ent{i}", f"ent{i}b"),
        ))
    pairs = [(a.entity_id, b.entity_id) for a in entities for b in entities
             if a.entity_id != b.entity_id]
    triples: list[tuple[str, str, str]] = []
    used: set[frozenset[str]] = set()
    for idx in rng.permutation(len(pairs)):
        if len(triples) == n_triples:
            break
        head, tail = pairs[idx]
        if exclude_reverse and frozenset((head, tail)) in used:
            continue
        used.add(frozenset((head, tail)))
        triples.append((head, tail, relation_label))
    triples.sort()
    return ToyKB(entities=tuple(entities), triples=tuple(triples))


def _mention_kb_ids(entity: KbEntity, occurrence: int) -> list[str]:
    # alternate between the primary id and the full id set so that
    # transitive KB-id merging actually gets exercised
    if len(entity.kb_ids) > 1 and occurrence % 2 == 1:
        return list(entity.kb_ids)
    return [entity.kb_ids[0]]


class _DocBuilder:
    def __init__(self, doc_id: str):
        self.doc_id = doc_id
        self.tokens: list[str] = []
        self.sentences: list[list[int]] = []
        self.roots: list[int] = []
        self.deps: list[list] = []
        self.mentions: list[dict] = []
        self.coref: list[list[list[int]]] = []
        self.relations: list[dict] = []
        self._occurrences: dict[str, int] = {}

    def sentence(self, words: list[str]) -> int:
        start = len(self.tokens)
        self.tokens.extend(words)
        end = len(self.tokens)
        self.sentences.append([start, end])
        self.roots.append(start)
        for k in range(start, end - 1):
            self.deps.append([k, k + 1, ARC_LABELS[(k - start) % len(ARC_LABELS)]])
        return start

    def mention(self, entity: KbEntity, position: int, width: int = 1) -> list[int]:
        occ = self._occurrences.get(entity.entity_id, 0)
        self._occurrences[entity.entity_id] = occ + 1
        span = [position, position + width]
        self.mentions.append({
            "span": span,
            "kb_ids": _mention_kb_ids(entity, occ),
            "type": "chem",
        })
        return span

    def relation(self, head: KbEntity, tail: KbEntity, label: str) -> None:
        self.relations.append({
            "head_kb": head.kb_ids[0],
            "tail_kb": tail.kb_ids[0],
            "label": label,
        })

    def record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "tokens": self.tokens,
            "sentences": self.sentences,
            "roots": self.roots,
            "deps": self.deps,
            "coref": self.coref,
            "mentions": self.mentions,
            "relations": self.relations,
        }


def _pick_distractor(kb: ToyKB, exclude: tuple[str, str],
                     rng: np.random.Generator) -> KbEntity | None:
    head, tail = exclude
    candidates = [
        e for e in kb.entities
        if e.entity_id not in exclude
        and not kb.related(e.entity_id, head)
        and not kb.related(e.entity_id, tail)
    ]
    if not candidates:
        return None
    return candidates[int(rng.integers(len(candidates)))]


def _build_intra(builder: _DocBuilder, head: KbEntity, tail: KbEntity,
                 distractor: KbEntity | None, label: str) -> None:
    s0 = builder.sentence([head.aliases[0], "activates", tail.aliases[0], "today"])
    builder.mention(head, s0)
    builder.mention(tail, s0 + 2)
    if distractor is not None:
        s1 = builder.sentence([distractor.aliases[0], "appeared", "quietly"])
        builder.mention(distractor, s1)
    s2 = builder.sentence([head.aliases[0], "levels", "rose"])
    builder.mention(head, s2)
    builder.relation(head, tail, label)


def _build_inter(builder: _DocBuilder, head: KbEntity, tail: KbEntity,
                 distractor: KbEntity | None, label: str) -> None:
    s0 = builder.sentence([head.aliases[0], "sends", "strong", "signals"])
    builder.mention(head, s0)
    s1 = builder.sentence([tail.aliases[0], "receives", "strong", "signals"])
    builder.mention(tail, s1)
    if distractor is not None:
        s2 = builder.sentence([distractor.aliases[0], "appeared", "quietly"])
        builder.mention(distractor, s2)
    builder.relation(head, tail, label)


def _build_coref(builder: _DocBuilder, head: KbEntity, tail: KbEntity,
                 distractor: KbEntity, label: str,
                 rng: np.random.Generator) -> None:
    # head and distractor share one surface form; a fair coin places the
    # true head first or second, so only the coreference chain tells the
    # two mentions apart
    surface = head.aliases[0]
    head_first = bool(rng.integers(2))
    s0 = builder.sentence([surface, "and", surface, "appeared"])
    head_pos = s0 if head_first else s0 + 2
    other_pos = s0 + 2 if head_first else s0
    head_span = builder.mention(head, head_pos)
    builder.mention(distractor, other_pos)
    s1 = builder.sentence([head.aliases[1], "activates", tail.aliases[0], "today"])
    builder.mention(tail, s1 + 2)
    builder.coref.append([head_span, [s1, s1 + 1]])
    builder.relation(head, tail, label)


def gen_corpus(kb: ToyKB, n_docs: int, pct_inter: float = 0.0,
               pct_coref_only: float = 0.0, seed: int = 0,
               triple_indices=None) -> tuple[list[dict], dict]:
    """Generate document records plus a planted-ground-truth sidecar.

    Positive pairs per document cycle through the KB triples (optionally
    restricted to ``triple_indices``). Mode counts are exact up to
    rounding: ``round(pct_coref_only * n_docs)`` documents are
    coreference-dependent, ``round(pct_inter * n_docs)`` are
    inter-sentence in total (the coreference ones included), and the
    remainder are intra-sentence.
    """
    for name, value in (("pct_inter", pct_inter), ("pct_coref_only", pct_coref_only)):
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"{name} must be in [0, 1], got {value}")
    if pct_coref_only > pct_inter:
        raise ConfigError(
            "coreference-dependent pairs are inter-sentence by construction;"
            f" pct_coref_only ({pct_coref_only}) cannot exceed pct_inter ({pct_inter})"
        )
    if not kb.triples:
        raise ConfigError("the KB has no triples to realise")
    triples = [kb.triples[i] for i in triple_indices] if triple_indices is not None \
        else list(kb.triples)
    if not triples:
        raise ConfigError("triple_indices selected no triples")
    rng = np.random.default_rng(seed)
    n_coref = round(pct_coref_only * n_docs)
    n_inter = round(pct_inter * n_docs) - n_coref
    modes = ["coref"] * n_coref + ["inter"] * n_inter
    modes += ["intra"] * (n_docs - len(modes))
    modes = [modes[i] for i in rng.permutation(n_docs)]
    records: list[dict] = []
    truth_docs: list[dict] = []
    for d in range(n_docs):
        head_id, tail_id, label = triples[d % len(triples)]
        head, tail = kb.entity(head_id), kb.entity(tail_id)
        builder = _DocBuilder(f"synth-{d:04d}")
        mode = modes[d]
        distractor = _pick_distractor(kb, (head_id, tail_id), rng)
        if mode == "coref":
            if distractor is None:
                raise ConfigError(
                    "coreference-dependent documents need a KB-unrelated distractor entity;"
                    " enlarge the KB or lower the triple density"
                )
            _build_coref(builder, head, tail, distractor, label, rng)
        elif mode == "inter":
            _build_inter(builder, head, tail, distractor, label)
        else:
            _build_intra(builder, head, tail, distractor, label)
        records.append(builder.record())
        truth_docs.append({
            "doc_id": builder.doc_id,
            "mode": mode,
            "positive": [head.kb_ids[0], tail.kb_ids[0], label],
            "coref_dependent": mode == "coref",
        })
    truth = {
        "kb": kb.to_jsonable(),
        "n_docs": n_docs,
        "pct_inter": pct_inter,
        "pct_coref_only": pct_coref_only,
        "seed": seed,
        "docs": truth_docs,
    }
    return records, truth


def write_corpus(records: list[dict], path: str | Path,
                 truth: dict | None = None, truth_path: str | Path | None = None) -> None:
    """Byte-stable JSONL output: sorted keys, compact separators."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
    if truth is not None:
        if truth_path is None:
            truth_path = Path(str(path) + ".truth.json")
        with open(truth_path, "w", encoding="utf-8") as fh:
            json.dump(truth, fh, indent=2, sort_keys=True)
            fh.write("\n")
