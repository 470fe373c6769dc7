"""Input embedding layer and stacked gated GCNN blocks.

Each token row is the concatenation of its word embedding and two
relative-position embeddings (signed offset to the closest mention of
the head and tail entity, clamped). K blocks then update every node from
its typed neighbourhood with per-slot affine messages scaled by a scalar
sigmoid gate, followed by the activation and a residual connection.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .graph import SlotGroup

UNK = "<unk>"


class WordVocabulary:
    """Token-to-index map with index 0 reserved for unknown tokens."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = (UNK,) + tuple(sorted(set(tokens) - {UNK}))
        self._index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._index.get(token, 0)

    def ids(self, tokens: Sequence[str]) -> np.ndarray:
        return np.asarray([self._index.get(t, 0) for t in tokens], dtype=np.int64)

    def to_jsonable(self) -> list[str]:
        return list(self.tokens[1:])

    @classmethod
    def from_jsonable(cls, payload: list[str]) -> "WordVocabulary":
        return cls(payload)


def build_word_vocab(docs) -> WordVocabulary:
    seen: set[str] = set()
    for doc in docs:
        seen.update(doc.tokens)
    return WordVocabulary(sorted(seen))


def glorot(rng: np.random.Generator, shape: tuple[int, ...],
           fan_in: int | None = None, fan_out: int | None = None) -> np.ndarray:
    fan_in = shape[0] if fan_in is None else fan_in
    fan_out = shape[-1] if fan_out is None else fan_out
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def load_pretrained_embeddings(path: str | Path, vocab: WordVocabulary, dim: int,
                               rng: np.random.Generator) -> np.ndarray:
    """Whitespace format: one token per line followed by ``dim`` floats.

    Vocabulary tokens absent from the file keep their random rows.
    """
    table = glorot(rng, (len(vocab), dim))
    loaded = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ConfigError(
                    f"{path}:{lineno}: expected {dim} values for {token!r}, got {len(values)}"
                )
            idx = vocab._index.get(token)
            if idx is not None and idx != 0:
                table[idx] = [float(v) for v in values]
                loaded += 1
    return table


class EmbeddingTables:
    def __init__(self, vocab: WordVocabulary, word_dim: int, position_dim: int,
                 clamp: int, rng: np.random.Generator,
                 pretrained_path: str | Path | None = None):
        self.vocab = vocab
        self.clamp = clamp
        if pretrained_path is not None:
            word = load_pretrained_embeddings(pretrained_path, vocab, word_dim, rng)
        else:
            word = glorot(rng, (len(vocab), word_dim))
        self.word_table = Tensor(word, requires_grad=True)
        rows = 2 * clamp + 1
        self.pos_head = Tensor(glorot(rng, (rows, position_dim)), requires_grad=True)
        self.pos_tail = Tensor(glorot(rng, (rows, position_dim)), requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        return {
            "embed.word": self.word_table,
            "embed.pos_head": self.pos_head,
            "embed.pos_tail": self.pos_tail,
        }


def relative_offsets(n: int, token_set: Sequence[int], clamp: int) -> np.ndarray:
    """Signed offset from each token to the closest token of the mention set.

    Offset is ``i - j`` for the nearest mention token j; ties between a
    left and right mention token at equal distance resolve to the
    negative offset. Values are clamped to [-clamp, clamp] and shifted to
    table indices [0, 2*clamp].
    """
    if len(token_set) == 0:
        raise ShapeError("mention token set is empty")
    ts = np.asarray(sorted(token_set), dtype=np.int64)
    pos = np.arange(n, dtype=np.int64)
    right = np.searchsorted(ts, pos, side="left")
    left = right - 1
    big = np.int64(4 * (n + clamp + 1))
    delta_left = np.where(left >= 0, pos - ts[np.clip(left, 0, len(ts) - 1)], big)
    delta_right = np.where(right < len(ts), pos - ts[np.clip(right, 0, len(ts) - 1)], -big)
    # prefer the negative offset on ties
    use_right = np.abs(delta_right) <= np.abs(delta_left)
    delta = np.where(use_right, delta_right, delta_left)
    return np.clip(delta, -clamp, clamp) + clamp


def encode_inputs(token_ids: np.ndarray, head_set: Sequence[int], tail_set: Sequence[int],
                  tables: EmbeddingTables) -> Tensor:
    """Per-token input rows [word ; head-offset ; tail-offset]."""
    n = len(token_ids)
    d1 = relative_offsets(n, head_set, tables.clamp)
    d2 = relative_offsets(n, tail_set, tables.clamp)
    return ad.concat(
        [
            ad.gather_rows(tables.word_table, token_ids),
            ad.gather_rows(tables.pos_head, d1),
            ad.gather_rows(tables.pos_tail, d2),
        ],
        axis=1,
    )


_ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh}


class GcnnBlock:
    """Per-slot affine message parameters plus edge-wise gate parameters."""

    def __init__(self, n_slots: int, dim: int, rng: np.random.Generator):
        self.dim = dim
        self.W = [Tensor(glorot(rng, (dim, dim)), requires_grad=True) for _ in range(n_slots)]
        self.b = [Tensor(np.zeros(dim), requires_grad=True) for _ in range(n_slots)]
        self.gate_w = [Tensor(glorot(rng, (dim, 1)), requires_grad=True) for _ in range(n_slots)]
        # gates start open
        self.gate_b = [Tensor(np.ones(1), requires_grad=True) for _ in range(n_slots)]

    def params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for s in range(len(self.W)):
            out[f"{prefix}.slot{s:02d}.W"] = self.W[s]
            out[f"{prefix}.slot{s:02d}.b"] = self.b[s]
            out[f"{prefix}.slot{s:02d}.gate_w"] = self.gate_w[s]
            out[f"{prefix}.slot{s:02d}.gate_b"] = self.gate_b[s]
        return out

    def apply(self, x: Tensor, groups: Sequence[SlotGroup], n: int, activation: str,
              residual: bool) -> Tensor:
        h: Tensor | None = None
        for grp in groups:
            xs = ad.gather_rows(x, grp.src)
            msg = ad.add(ad.matmul(xs, self.W[grp.slot]), self.b[grp.slot])
            gate = ad.sigmoid(ad.add(ad.matmul(xs, self.gate_w[grp.slot]), self.gate_b[grp.slot]))
            contrib = ad.segment_sum(ad.mul(msg, gate), grp.dst, n)
            h = contrib if h is None else ad.add(h, contrib)
        if h is None:
            # all categories ablated away: every node is isolated
            h = Tensor(np.zeros((n, self.dim)))
        out = _ACTIVATIONS[activation](h)
        if residual:
            out = ad.add(out, x)
        return out


class GcnnEncoder:
    """Embedding layer, optional input projection, and K stacked blocks."""

    def __init__(self, config, vocab: WordVocabulary, n_slots: int,
                 rng: np.random.Generator):
        self.config = config
        d_in = config.word_dim + 2 * config.position_dim
        d_g = config.gcnn_dim
        self.tables = EmbeddingTables(
            vocab, config.word_dim, config.position_dim, config.position_clamp, rng,
            pretrained_path=config.embeddings_path,
        )
        self.proj_w: Tensor | None = None
        self.proj_b: Tensor | None = None
        if d_in != d_g or config.input_projection:
            self.proj_w = Tensor(glorot(rng, (d_in, d_g)), requires_grad=True)
            self.proj_b = Tensor(np.zeros(d_g), requires_grad=True)
        self.blocks = [GcnnBlock(n_slots, d_g, rng) for _ in range(config.gcnn_blocks)]

    def params(self) -> dict[str, Tensor]:
        out = self.tables.params()
        if self.proj_w is not None:
            out["input_proj.W"] = self.proj_w
            out["input_proj.b"] = self.proj_b
        for k, block in enumerate(self.blocks):
            out.update(block.params(f"block{k}"))
        return out

    def encode(self, token_ids: np.ndarray, head_set: Sequence[int], tail_set: Sequence[int],
               groups: Sequence[SlotGroup], train: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
        cfg = self.config
        x = encode_inputs(token_ids, head_set, tail_set, self.tables)
        if train:
            x = ad.dropout(x, cfg.dropout_input, rng, train=True)
        if self.proj_w is not None:
            x = ad.add(ad.matmul(x, self.proj_w), self.proj_b)
        n = len(token_ids)
        for block in self.blocks:
            x = block.apply(x, groups, n, cfg.activation, cfg.residual)
            if train:
                x = ad.dropout(x, cfg.dropout_gcnn, rng, train=True)
        return x
