"""Metrics, intra/inter-sentence breakdown, ablations, and the top-N sweep."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

from .config import TrainConfig
from .corpus import Document, PairInstance, generate_pairs
from .errors import EvalError, GraphBuildError
from .graph import CATEGORIES
from .model import RelationModel


def config_fingerprint(config: TrainConfig) -> str:
    payload = json.dumps(config.to_jsonable(), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class SliceCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_jsonable(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass
class EvalReport:
    overall: SliceCounts = field(default_factory=SliceCounts)
    intra: SliceCounts = field(default_factory=SliceCounts)
    inter: SliceCounts = field(default_factory=SliceCounts)
    fingerprint: str = ""

    def to_jsonable(self) -> dict:
        return {
            "overall": self.overall.to_jsonable(),
            "intra": self.intra.to_jsonable(),
            "inter": self.inter.to_jsonable(),
            "config_fingerprint": self.fingerprint,
        }

    def text_table(self) -> str:
        lines = [f"{'slice':<8} {'P':>7} {'R':>7} {'F1':>7} {'TP':>5} {'FP':>5} {'FN':>5}"]
        for name, c in (("overall", self.overall), ("intra", self.intra), ("inter", self.inter)):
            lines.append(
                f"{name:<8} {c.precision:>7.4f} {c.recall:>7.4f} {c.f1:>7.4f}"
                f" {c.tp:>5d} {c.fp:>5d} {c.fn:>5d}"
            )
        return "\n".join(lines)


def split_intra_inter(pair: PairInstance, doc: Document) -> str:
    """"intra" iff some sentence contains tokens of both entities."""
    head = set(pair.head_token_set)
    tail = set(pair.tail_token_set)
    for lo, hi in doc.sentences:
        span = range(lo, hi)
        if any(t in head for t in span) and any(t in tail for t in span):
            return "intra"
    return "inter"


def score_pair(counts: SliceCounts, gold: int, predicted: int) -> None:
    """TP: predicted == gold != 0; FP: predicted != 0 while gold == 0;
    FN: gold != 0 and predicted is zero or the wrong category."""
    if gold != 0 and predicted == gold:
        counts.tp += 1
        return
    if predicted != 0 and gold == 0:
        counts.fp += 1
    if gold != 0:
        counts.fn += 1


def evaluate(model: RelationModel, docs: Sequence[Document],
             pairs_by_doc: dict[str, list[PairInstance]] | None = None,
             states: dict[str, object] | None = None) -> EvalReport:
    """Score the model over every candidate pair of the corpus."""
    report = EvalReport(fingerprint=config_fingerprint(model.config))
    cfg = model.config
    for doc in docs:
        pairs = (pairs_by_doc or {}).get(doc.doc_id)
        if pairs is None:
            pairs = generate_pairs(doc, model.relation_vocab, mode=cfg.pair_mode,
                                   pair_types=cfg.pair_types)
        if not pairs:
            continue
        state = (states or {}).get(doc.doc_id)
        if state is None:
            state = model.make_state(doc)
        for pair in pairs:
            predicted = model.predict(state, pair)
            slice_counts = report.intra if split_intra_inter(pair, doc) == "intra" else report.inter
            score_pair(report.overall, pair.label, predicted)
            score_pair(slice_counts, pair.label, predicted)
    return report


@dataclass
class AblationResult:
    category: str
    retrained: bool
    full: EvalReport
    ablated: EvalReport

    @property
    def deltas(self) -> dict[str, float]:
        return {
            "overall": self.ablated.overall.f1 - self.full.overall.f1,
            "intra": self.ablated.intra.f1 - self.full.intra.f1,
            "inter": self.ablated.inter.f1 - self.full.inter.f1,
        }

    def to_jsonable(self) -> dict:
        return {
            "category": self.category,
            "retrained": self.retrained,
            "full": self.full.to_jsonable(),
            "ablated": self.ablated.to_jsonable(),
            "deltas": self.deltas,
        }


def ablate(train_docs: Sequence[Document], dev_docs: Sequence[Document],
           config: TrainConfig, category: str, seed: int | None = None,
           full_result=None) -> AblationResult:
    """Measure the effect of removing one edge category.

    Default is a full retrain without the category; with
    ``config.ablation_retrain`` false the trained full model is instead
    re-evaluated on graphs lacking the category. ``full_result`` lets a
    harness reuse one full-graph training run across categories.
    """
    from .training import train  # deferred to avoid a module cycle

    if category not in CATEGORIES:
        raise EvalError(f"unknown edge category {category!r}")
    if category not in config.edge_categories:
        raise EvalError(f"category {category!r} is not enabled in this config")
    remaining = tuple(c for c in config.edge_categories if c != category)
    if not remaining:
        raise GraphBuildError("removing the only enabled category leaves an empty graph")
    if full_result is None:
        full_result = train(train_docs, dev_docs, config, seed=seed)
    full_report = evaluate(full_result.model, dev_docs)
    if config.ablation_retrain:
        ablated_result = train(train_docs, dev_docs, config.replace(edge_categories=remaining),
                               seed=seed)
        ablated_report = evaluate(ablated_result.model, dev_docs)
    else:
        model = full_result.model
        states = {d.doc_id: model.make_state(d, enabled=remaining) for d in dev_docs}
        ablated_report = evaluate(model, dev_docs, states=states)
    return AblationResult(category=category, retrained=config.ablation_retrain,
                          full=full_report, ablated=ablated_report)


def ablate_all(train_docs, dev_docs, config: TrainConfig,
               seed: int | None = None) -> list[AblationResult]:
    from .training import train

    full_result = train(train_docs, dev_docs, config, seed=seed)
    return [
        ablate(train_docs, dev_docs, config, category, seed=seed, full_result=full_result)
        for category in config.edge_categories
    ]


def ablation_table(results: Sequence[AblationResult]) -> str:
    lines = [f"{'model':<24} {'overall':>8} {'intra':>8} {'inter':>8}"]
    if results:
        full = results[0].full
        lines.append(f"{'full graph':<24} {full.overall.f1:>8.4f} {full.intra.f1:>8.4f}"
                     f" {full.inter.f1:>8.4f}")
    for res in results:
        rep = res.ablated
        lines.append(f"{'- ' + res.category:<24} {rep.overall.f1:>8.4f} {rep.intra.f1:>8.4f}"
                     f" {rep.inter.f1:>8.4f}")
    return "\n".join(lines)


@dataclass
class SweepRow:
    top_n: int
    n_slots: int
    dev_f1: float
    best_epoch: int

    def to_jsonable(self) -> dict:
        return {"top_n": self.top_n, "n_slots": self.n_slots,
                "dev_f1": self.dev_f1, "best_epoch": self.best_epoch}


def sweep_topn(train_docs, dev_docs, config: TrainConfig, values: Sequence[int],
               seed: int | None = None) -> list[SweepRow]:
    """One training run per top-N value; rows sorted by N."""
    from .training import train

    if not values:
        raise EvalError("sweep needs at least one top-N value")
    rows = []
    for n in sorted(values):
        result = train(train_docs, dev_docs, config.replace(top_n=n), seed=seed)
        rows.append(SweepRow(top_n=n, n_slots=result.model.edge_vocab.n_slots,
                             dev_f1=result.best_f1, best_epoch=result.best_epoch))
    return rows


def sweep_table(rows: Sequence[SweepRow]) -> str:
    lines = [f"{'top-N':>6} {'slots':>6} {'dev F1':>8} {'best epoch':>11}"]
    for row in rows:
        lines.append(f"{row.top_n:>6d} {row.n_slots:>6d} {row.dev_f1:>8.4f} {row.best_epoch:>11d}")
    return "\n".join(lines)
