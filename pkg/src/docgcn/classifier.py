"""Head/tail projections, bi-affine pair scoring, and the training loss.

Every token is projected into separate head and tail latent spaces by
two-layer FFNNs (no bias, matching the scoring form). A learned rank-3
tensor scores each (head token, tail token) mention pair per relation
category, and the pairwise scores are aggregated per entity pair with a
numerically stable log-sum-exp.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import glorot
from .errors import LabelError, ShapeError


class MilClassifier:
    def __init__(self, d_g: int, d_mil: int, n_relations: int, rng: np.random.Generator):
        if n_relations < 2:
            raise LabelError(f"need at least 2 relation categories, got {n_relations}")
        self.d_mil = d_mil
        self.n_relations = n_relations
        self.head_w0 = Tensor(glorot(rng, (d_g, d_mil)), requires_grad=True)
        self.head_w1 = Tensor(glorot(rng, (d_mil, d_mil)), requires_grad=True)
        self.tail_w0 = Tensor(glorot(rng, (d_g, d_mil)), requires_grad=True)
        self.tail_w1 = Tensor(glorot(rng, (d_mil, d_mil)), requires_grad=True)
        self.biaffine = Tensor(
            glorot(rng, (d_mil, n_relations, d_mil), fan_in=d_mil, fan_out=d_mil),
            requires_grad=True,
        )

    def params(self) -> dict[str, Tensor]:
        return {
            "mil.head_w0": self.head_w0,
            "mil.head_w1": self.head_w1,
            "mil.tail_w0": self.tail_w0,
            "mil.tail_w1": self.tail_w1,
            "mil.biaffine": self.biaffine,
        }

    def project(self, x: Tensor, dropout: float = 0.0, rng: np.random.Generator | None = None,
                train: bool = False) -> tuple[Tensor, Tensor]:
        """Two-layer ReLU FFNN per side, dropout on the hidden layer."""
        head = ad.relu(ad.matmul(x, self.head_w0))
        tail = ad.relu(ad.matmul(x, self.tail_w0))
        if train:
            head = ad.dropout(head, dropout, rng, train=True)
            tail = ad.dropout(tail, dropout, rng, train=True)
        return ad.matmul(head, self.head_w1), ad.matmul(tail, self.tail_w1)

    def pair_scores(self, x_head: Tensor, x_tail: Tensor,
                    head_tokens: Sequence[int], tail_tokens: Sequence[int],
                    head_spans: Sequence[tuple[int, int]] = (),
                    tail_spans: Sequence[tuple[int, int]] = (),
                    mention_mode: str = "tokens") -> Tensor:
        if mention_mode == "tokens":
            h = ad.gather_rows(x_head, np.asarray(head_tokens, dtype=np.int64))
            t = ad.gather_rows(x_tail, np.asarray(tail_tokens, dtype=np.int64))
        elif mention_mode == "mention-mean":
            h = _mention_means(x_head, head_spans)
            t = _mention_means(x_tail, tail_spans)
        else:
            raise LabelError(f"unknown mention mode {mention_mode!r}")
        return entity_pair_scores(h, t, self.biaffine)


def _mention_means(x: Tensor, spans: Sequence[tuple[int, int]]) -> Tensor:
    """One row per mention: the mean of its token rows."""
    if not spans:
        raise ShapeError("mention span set is empty")
    tokens: list[int] = []
    owner: list[int] = []
    for m, (lo, hi) in enumerate(spans):
        tokens.extend(range(lo, hi))
        owner.extend([m] * (hi - lo))
    gathered = ad.gather_rows(x, np.asarray(tokens, dtype=np.int64))
    sums = ad.segment_sum(gathered, np.asarray(owner, dtype=np.int64), len(spans))
    counts = np.asarray([hi - lo for lo, hi in spans], dtype=np.float64)
    return ad.mul(sums, Tensor(1.0 / counts[:, None]))


def entity_pair_scores(head_rows: Tensor, tail_rows: Tensor, biaffine: Tensor) -> Tensor:
    """Per-category scores: logsumexp over all (head row, tail row) pairs.

    Raw pair score for category c is head_i . R[:, c, :] . tail_j; the
    aggregation is exact for a single pair and never overflows.
    """
    if head_rows.data.shape[0] == 0 or tail_rows.data.shape[0] == 0:
        raise ShapeError("entity pair with an empty mention token set")
    d, r, d2 = biaffine.data.shape
    n_head = head_rows.data.shape[0]
    n_tail = tail_rows.data.shape[0]
    if head_rows.data.shape[1] != d or tail_rows.data.shape[1] != d2:
        raise ShapeError(
            f"projection dim {head_rows.data.shape[1]} does not match bi-affine sides {(d, d2)}"
        )
    mixed = ad.matmul(head_rows, ad.reshape(biaffine, (d, r * d2)))  # n_head x (r*d)
    stacked = ad.reshape(mixed, (n_head * r, d2))
    raw = ad.matmul(stacked, ad.transpose(tail_rows))  # (n_head*r) x n_tail
    cube = ad.reshape(raw, (n_head, r, n_tail))
    return ad.logsumexp(cube, axis=(0, 2))


def loss_and_predict(scores: Tensor, gold: int) -> tuple[Tensor, int]:
    """Softmax cross-entropy and the argmax category (ties: lowest index)."""
    r = scores.data.shape[0]
    if scores.data.ndim != 1 or r < 2:
        raise ShapeError(f"scores must be a vector of >= 2 categories, got {scores.data.shape}")
    if not 0 <= gold < r:
        raise LabelError(f"gold label {gold} outside [0, {r})")
    onehot = np.zeros(r)
    onehot[gold] = 1.0
    loss = ad.add(ad.logsumexp(scores), ad.neg(ad.reduce_sum(ad.mul(scores, Tensor(onehot)))))
    return loss, int(np.argmax(scores.data))
