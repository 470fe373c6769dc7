"""Shared test utilities: the finite-difference oracle and fixture builders.

The numeric gradient here is intentionally independent of the tape: it
re-runs the forward function with perturbed entries and never touches
autodiff internals.
"""

import math

import numpy as np

from docgcn.corpus import Document, Mention


def biaffine_oracle(head: np.ndarray, tail: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Naive double loop over all mention pairs, logsumexp per category."""
    d, r, _ = R.shape
    scores = []
    for c in range(r):
        raw = [
            float(head[i] @ R[:, c, :] @ tail[j])
            for i in range(head.shape[0]) for j in range(tail.shape[0])
        ]
        m = max(raw)
        scores.append(m + math.log(sum(math.exp(v - m) for v in raw)))
    return np.array(scores)


def numeric_gradient(f, arr: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central finite differences of scalar-valued f() w.r.t. arr entries.

    ``arr`` is perturbed in place and restored; ``f`` must re-read it.
    """
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        f_plus = f()
        flat[i] = saved - eps
        f_minus = f()
        flat[i] = saved
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Worst relative disagreement, with an absolute floor for tiny values."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def six_token_doc() -> Document:
    """Two sentences of three tokens, all five edge categories present.

    Hand-count of edges with everything enabled: 4 dependency +
    4 adjacent-word + 6 self + 1 adjacent-sentence + 1 coreference = 16.
    """
    return Document(
        doc_id="fix-6tok",
        tokens=("alpha", "binds", "beta", "it", "blocks", "gamma"),
        sentences=((0, 3), (3, 6)),
        dep_arcs=((1, 0, "nsubj"), (1, 2, "dobj"), (4, 3, "nsubj"), (4, 5, "dobj")),
        sentence_roots=(1, 4),
        coref_chains=(((0, 1), (3, 4)),),
        mentions=(
            Mention((0, 1), "KA", ("KA",), "chem"),
            Mention((5, 6), "KB", ("KB",), "chem"),
        ),
        gold_relations=(("KA", "KB", "interacts"),),
    )


def doc_record(**overrides) -> dict:
    """A well-formed two-sentence JSONL record, overridable per test."""
    record = {
        "doc_id": "rec-1",
        "tokens": ["alpha", "binds", "beta", "it", "blocks", "gamma"],
        "sentences": [[0, 3], [3, 6]],
        "roots": [1, 4],
        "deps": [[1, 0, "nsubj"], [1, 2, "dobj"], [4, 3, "nsubj"], [4, 5, "dobj"]],
        "coref": [[[0, 1], [3, 4]]],
        "mentions": [
            {"span": [0, 1], "kb_ids": ["KA"], "type": "chem"},
            {"span": [5, 6], "kb_ids": ["KB"], "type": "chem"},
        ],
        "relations": [{"head_kb": "KA", "tail_kb": "KB", "label": "interacts"}],
    }
    record.update(overrides)
    return record
