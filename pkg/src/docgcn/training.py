"""Training loop: Adam with EMA shadow weights, per-epoch learning-rate
decay, global-norm gradient clipping, and F1-based early stopping.

Everything stochastic (parameter init, shuffling, dropout) draws from a
single generator seeded from the config, so a (seed, config, corpus)
triple maps to bit-identical checkpoints and metric logs.
"""

from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .corpus import NO_RELATION, Document, PairInstance, generate_pairs
from .encoder import build_word_vocab
from .errors import ConfigError, NonFiniteError, TrainingDiverged
from .evaluation import EvalReport, evaluate
from .graph import build_graph, fit_vocabulary
from .model import DocState, RelationModel

log = logging.getLogger(__name__)


def clip_global_norm(grads: dict[str, np.ndarray], clip: float) -> float:
    """Scale all gradients by clip/norm when the global L2 norm exceeds clip.

    Returns the pre-clip norm (the caller checks it for divergence).
    """
    if clip <= 0:
        raise ConfigError(f"clip threshold must be positive, got {clip}")
    total = 0.0
    for g in grads.values():
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    norm = float(np.sqrt(total))
    if norm > clip:
        scale = clip / norm
        for g in grads.values():
            g *= scale
    return norm


class AdamEma:
    """Adam with bias correction plus an EMA shadow of every parameter.

    The shadow starts at zero and is de-biased on read, so after t steps
    it is the exponentially weighted average of the parameter trajectory
    (and exactly the parameters themselves if they never moved).
    """

    def __init__(self, params: dict[str, Tensor], config: TrainConfig):
        self.params = params
        self.beta1 = config.adam_beta1
        self.beta2 = config.adam_beta2
        self.eps = config.adam_eps
        self.ema_decay = config.ema_decay
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.shadow = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        d = self.ema_decay
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            s = self.shadow[name]
            s *= d
            s += (1 - d) * p.data

    def ema_values(self) -> dict[str, np.ndarray]:
        if self.t == 0:
            return {n: p.data.copy() for n, p in self.params.items()}
        debias = 1.0 - self.ema_decay ** self.t
        return {n: s / debias for n, s in self.shadow.items()}

    @contextmanager
    def using_ema(self):
        """Temporarily evaluate with the de-biased shadow weights."""
        saved = {n: p.data for n, p in self.params.items()}
        ema = self.ema_values()
        for n, p in self.params.items():
            p.data = ema[n]
        try:
            yield
        finally:
            for n, p in self.params.items():
                p.data = saved[n]


def derive_relation_vocab(docs: Sequence[Document]) -> tuple[str, ...]:
    labels = sorted({label for doc in docs for _, _, label in doc.gold_relations})
    return (NO_RELATION, *labels)


def build_model(config: TrainConfig, train_docs: Sequence[Document],
                rng: np.random.Generator) -> RelationModel:
    """Fit every vocabulary on the training split only, then init the model."""
    graphs = [build_graph(d, enabled=config.edge_categories,
                          coref_clique=config.coref_clique) for d in train_docs]
    edge_vocab = fit_vocabulary(graphs, config.top_n, pool=config.rank_pool)
    word_vocab = build_word_vocab(train_docs)
    relation_vocab = config.relations or derive_relation_vocab(train_docs)
    return RelationModel(config, word_vocab, edge_vocab, relation_vocab, rng)


@dataclass
class TrainResult:
    model: RelationModel
    best_epoch: int
    best_f1: float
    epochs: list[dict] = field(default_factory=list)
    stopped_early: bool = False
    seed: int = 0


def _pair_order(pairs: list[PairInstance], rng: np.random.Generator,
                doc_grouped: bool) -> list[int]:
    if not doc_grouped:
        return list(rng.permutation(len(pairs)))
    by_doc: dict[str, list[int]] = {}
    for i, p in enumerate(pairs):
        by_doc.setdefault(p.doc_id, []).append(i)
    doc_ids = sorted(by_doc)
    order: list[int] = []
    for d in rng.permutation(len(doc_ids)):
        members = by_doc[doc_ids[d]]
        order.extend(members[j] for j in rng.permutation(len(members)))
    return order


def train(train_docs: Sequence[Document], dev_docs: Sequence[Document],
          config: TrainConfig, seed: int | None = None,
          out_dir: str | Path | None = None) -> TrainResult:
    """Optimise until dev F1 stops improving, then keep the best EMA weights.

    With ``merge_train_dev`` the dev split joins the training pairs while
    still steering early stopping. The returned model carries the
    best-epoch EMA weights; ``out_dir`` additionally gets a checkpoint, a
    metrics log (one JSON object per epoch), and a config snapshot.
    """
    if not train_docs or not dev_docs:
        raise ConfigError("train and dev splits must both be non-empty")
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    model = build_model(config, train_docs, rng)
    params = model.params()
    optimizer = AdamEma(params, config)

    fit_docs = list(train_docs) + (list(dev_docs) if config.merge_train_dev else [])
    states: dict[str, DocState] = {}
    pairs: list[PairInstance] = []
    for doc in fit_docs:
        cached = states.get(doc.doc_id)
        if cached is not None and cached.doc is not doc:
            raise ConfigError(f"duplicate doc_id {doc.doc_id!r} across training splits")
        if cached is None:
            states[doc.doc_id] = model.make_state(doc)
        pairs.extend(generate_pairs(doc, model.relation_vocab, mode=config.pair_mode,
                                    pair_types=config.pair_types))
    if not pairs:
        raise ConfigError("no candidate pairs in the training split")
    dev_states = {d.doc_id: model.make_state(d) for d in dev_docs}
    dev_pairs = {
        d.doc_id: generate_pairs(d, model.relation_vocab, mode=config.pair_mode,
                                 pair_types=config.pair_types)
        for d in dev_docs
    }

    param_tensors = list(params.values())
    param_names = list(params)
    result = TrainResult(model=model, best_epoch=0, best_f1=-1.0, seed=seed)
    best_params: dict[str, np.ndarray] | None = None
    lr = config.learning_rate
    epochs_since_best = 0
    metrics_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out_dir / "metrics.jsonl", "w", encoding="utf-8")
    try:
        for epoch in range(1, config.max_epochs + 1):
            started = time.perf_counter()
            order = _pair_order(pairs, rng, config.doc_grouped_batching)
            epoch_loss = 0.0
            n_batches = 0
            for start in range(0, len(order), config.batch_size):
                batch = [pairs[i] for i in order[start:start + config.batch_size]]
                try:
                    with Tape() as tape:
                        total = None
                        for pair in batch:
                            loss, _ = model.pair_loss(states[pair.doc_id], pair,
                                                      train=True, rng=rng)
                            total = loss if total is None else ad.add(total, loss)
                        batch_loss = ad.mul(total, Tensor(1.0 / len(batch)))
                except NonFiniteError as exc:
                    raise TrainingDiverged(
                        f"non-finite loss in epoch {epoch}, batch {n_batches}"
                        f" (docs {sorted({p.doc_id for p in batch})}): {exc}"
                    ) from exc
                grad_map = tape.backward(batch_loss, param_tensors)
                grads = {name: grad_map[t] for name, t in zip(param_names, param_tensors)}
                norm = clip_global_norm(grads, config.grad_clip)
                if not np.isfinite(norm):
                    raise TrainingDiverged(
                        f"non-finite gradient norm in epoch {epoch}, batch {n_batches}"
                        f" (docs {sorted({p.doc_id for p in batch})})"
                    )
                optimizer.step(grads, lr)
                epoch_loss += batch_loss.item()
                n_batches += 1
            with optimizer.using_ema():
                report = evaluate(model, dev_docs, pairs_by_doc=dev_pairs, states=dev_states)
            f1 = report.overall.f1
            # wall-clock timing stays out of the entry: the metrics log is
            # part of the deterministic (seed, config, corpus) fingerprint
            entry = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": epoch_loss / max(n_batches, 1),
                "dev_precision": report.overall.precision,
                "dev_recall": report.overall.recall,
                "dev_f1": f1,
            }
            result.epochs.append(entry)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(entry, sort_keys=True) + "\n")
                metrics_fh.flush()
            log.info("epoch %d: loss %.4f dev F1 %.4f (%.1fs)", epoch,
                     entry["train_loss"], f1, time.perf_counter() - started)
            if f1 > result.best_f1:
                result.best_f1 = f1
                result.best_epoch = epoch
                best_params = optimizer.ema_values()
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if epochs_since_best >= config.patience:
                    result.stopped_early = True
                    break
            lr *= config.lr_decay
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    model.set_param_values(best_params)
    if out_dir is not None:
        from .config import write_config_snapshot

        save_checkpoint(out_dir / "checkpoint", model, result.best_epoch, result.best_f1)
        write_config_snapshot(config, out_dir / "config.json")
    return result


@dataclass
class SeedRun:
    seed: int
    ok: bool
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    best_epoch: int = 0
    error: str = ""

    def to_jsonable(self) -> dict:
        return {"seed": self.seed, "ok": self.ok, "precision": self.precision,
                "recall": self.recall, "f1": self.f1, "best_epoch": self.best_epoch,
                "error": self.error}


@dataclass
class SeedReport:
    runs: list[SeedRun]
    mean: dict[str, float]
    std: dict[str, float]

    def to_jsonable(self) -> dict:
        return {"runs": [r.to_jsonable() for r in self.runs],
                "mean": self.mean, "std": self.std}

    def text_table(self) -> str:
        lines = [f"{'seed':>6} {'P':>8} {'R':>8} {'F1':>8} {'best epoch':>11}"]
        for r in self.runs:
            if r.ok:
                lines.append(f"{r.seed:>6d} {r.precision:>8.4f} {r.recall:>8.4f}"
                             f" {r.f1:>8.4f} {r.best_epoch:>11d}")
            else:
                lines.append(f"{r.seed:>6d} FAILED: {r.error}")
        lines.append(
            f"{'mean':>6} {self.mean['precision']:>8.4f} {self.mean['recall']:>8.4f}"
            f" {self.mean['f1']:>8.4f}"
        )
        lines.append(
            f"{'std':>6} {self.std['precision']:>8.4f} {self.std['recall']:>8.4f}"
            f" {self.std['f1']:>8.4f}"
        )
        return "\n".join(lines)


def run_seeds(train_docs: Sequence[Document], dev_docs: Sequence[Document],
              config: TrainConfig, eval_docs: Sequence[Document] | None = None,
              seeds: Sequence[int] | None = None) -> SeedReport:
    """Independent training runs per seed with mean/std of P, R, and F1.

    A failing seed is reported with its error and excluded from the
    aggregate rather than aborting the whole sweep.
    """
    seeds = tuple(seeds if seeds is not None else config.seeds)
    eval_docs = dev_docs if eval_docs is None else eval_docs
    runs: list[SeedRun] = []
    for seed in seeds:
        try:
            result = train(train_docs, dev_docs, config, seed=seed)
            report: EvalReport = evaluate(result.model, eval_docs)
            runs.append(SeedRun(seed=seed, ok=True, precision=report.overall.precision,
                                recall=report.overall.recall, f1=report.overall.f1,
                                best_epoch=result.best_epoch))
        except Exception as exc:  # noqa: BLE001 - partial results by contract
            log.exception("seed %d failed", seed)
            runs.append(SeedRun(seed=seed, ok=False, error=str(exc)))
    good = [r for r in runs if r.ok]
    mean: dict[str, float] = {}
    std: dict[str, float] = {}
    for key in ("precision", "recall", "f1"):
        values = [getattr(r, key) for r in good]
        mean[key] = float(np.mean(values)) if values else 0.0
        std[key] = float(np.std(values)) if values else 0.0
    return SeedReport(runs=runs, mean=mean, std=std)
