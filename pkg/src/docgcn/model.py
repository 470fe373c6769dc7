"""The full relation extraction model: encoder + MIL classifier + vocabularies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .classifier import MilClassifier, loss_and_predict
from .config import TrainConfig
from .corpus import Document, PairInstance
from .encoder import GcnnEncoder, WordVocabulary
from .errors import EvalError
from .graph import DocumentGraph, EdgeTypeVocabulary, SlotGroup, build_graph, group_messages


@dataclass
class DocState:
    """Pair-independent per-document tensorable pieces, computed once."""

    doc: Document
    token_ids: np.ndarray
    groups: tuple[SlotGroup, ...]


class RelationModel:
    def __init__(self, config: TrainConfig, word_vocab: WordVocabulary,
                 edge_vocab: EdgeTypeVocabulary, relation_vocab: tuple[str, ...],
                 rng: np.random.Generator):
        self.config = config
        self.word_vocab = word_vocab
        self.edge_vocab = edge_vocab
        self.relation_vocab = tuple(relation_vocab)
        self.encoder = GcnnEncoder(config, word_vocab, edge_vocab.n_slots, rng)
        self.classifier = MilClassifier(
            config.gcnn_dim, config.mil_dim, len(self.relation_vocab), rng
        )
        self._params = self.encoder.params() | self.classifier.params()

    def params(self) -> dict[str, Tensor]:
        return self._params

    def make_state(self, doc: Document, enabled=None) -> DocState:
        graph = build_graph(
            doc,
            enabled=self.config.edge_categories if enabled is None else enabled,
            coref_clique=self.config.coref_clique,
        )
        return self.state_from_graph(doc, graph)

    def state_from_graph(self, doc: Document, graph: DocumentGraph) -> DocState:
        return DocState(
            doc=doc,
            token_ids=self.word_vocab.ids(doc.tokens),
            groups=group_messages(graph, self.edge_vocab),
        )

    def pair_scores(self, state: DocState, pair: PairInstance, train: bool = False,
                    rng: np.random.Generator | None = None) -> Tensor:
        cfg = self.config
        encoded = self.encoder.encode(
            state.token_ids, pair.head_token_set, pair.tail_token_set, state.groups,
            train=train, rng=rng,
        )
        x_head, x_tail = self.classifier.project(
            encoded, dropout=cfg.dropout_mil, rng=rng, train=train
        )
        return self.classifier.pair_scores(
            x_head, x_tail, pair.head_token_set, pair.tail_token_set,
            head_spans=pair.head_mention_spans, tail_spans=pair.tail_mention_spans,
            mention_mode=cfg.mention_mode,
        )

    def pair_loss(self, state: DocState, pair: PairInstance, train: bool = True,
                  rng: np.random.Generator | None = None) -> tuple[Tensor, int]:
        scores = self.pair_scores(state, pair, train=train, rng=rng)
        return loss_and_predict(scores, pair.label)

    def predict(self, state: DocState, pair: PairInstance) -> int:
        scores = self.pair_scores(state, pair, train=False)
        return int(np.argmax(scores.data))

    def zero_category_slots(self, category: str) -> None:
        """Zero every parameter slot serving one edge category, in place.

        With all four slot parameters zeroed a slot's messages vanish
        exactly, which matches removing the category from the graph when
        no other category shares its buckets.
        """
        slots = self.edge_vocab.slots_for_category(category)
        if not slots:
            raise EvalError(f"no parameter slots found for category {category!r}")
        for block in self.encoder.blocks:
            for s in slots:
                block.W[s].data[:] = 0.0
                block.b[s].data[:] = 0.0
                block.gate_w[s].data[:] = 0.0
                block.gate_b[s].data[:] = 0.0

    def set_param_values(self, values: dict[str, np.ndarray]) -> None:
        for name, tensor in self._params.items():
            if name not in values:
                raise EvalError(f"missing value for parameter {name!r}")
            if values[name].shape != tensor.data.shape:
                raise EvalError(
                    f"parameter {name!r} shape {values[name].shape} != {tensor.data.shape}"
                )
            tensor.data = np.array(values[name], dtype=np.float64)

    def param_values(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}
