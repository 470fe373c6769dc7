import numpy as np
import pytest

from docgcn.config import TrainConfig
from docgcn.corpus import load_corpus
from docgcn.synth import gen_corpus, gen_kb, write_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Small dimensions so gradient checks and training stay fast."""
    return TrainConfig(
        word_dim=6, position_dim=3, gcnn_dim=12, mil_dim=8, gcnn_blocks=2,
        position_clamp=8, top_n=4, batch_size=8, max_epochs=3, patience=3,
        learning_rate=5e-3,
    )


@pytest.fixture(scope="session")
def synth_corpus(tmp_path_factory):
    """A small mixed corpus on disk, shared across tests."""
    path = tmp_path_factory.mktemp("corpus") / "synth.jsonl"
    kb = gen_kb(14, 8, seed=5, exclude_reverse=True)
    records, truth = gen_corpus(kb, 24, pct_inter=0.5, pct_coref_only=0.25, seed=5)
    write_corpus(records, path, truth=truth)
    docs, stats = load_corpus(path)
    return {"path": path, "docs": docs, "truth": truth, "stats": stats, "kb": kb}
