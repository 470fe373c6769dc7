import json
import math

import numpy as np
import pytest

from docgcn import training
from docgcn.autodiff import Tensor
from docgcn.checkpoint import load_checkpoint, read_param_blob, save_checkpoint
from docgcn.config import TrainConfig
from docgcn.corpus import merge_entities
from docgcn.errors import ConfigError, TrainingDiverged
from docgcn.evaluation import EvalReport, SliceCounts, evaluate
from docgcn.training import AdamEma, clip_global_norm, derive_relation_vocab, run_seeds, train
from helpers import six_token_doc


def test_clip_below_threshold_unchanged():
    grads = {"a": np.array([3.0, 4.0])}  # norm 5
    norm = clip_global_norm(grads, 10.0)
    assert norm == 5.0
    assert grads["a"].tolist() == [3.0, 4.0]


def test_clip_scales_to_threshold():
    grads = {"a": np.array([30.0, 40.0])}  # norm 50
    clip_global_norm(grads, 10.0)
    assert grads["a"].tolist() == [6.0, 8.0]


def test_clip_random_post_norm_bounded(rng):
    grads = {f"g{i}": rng.standard_normal((4, 5)) * 100 for i in range(4)}
    clip_global_norm(grads, 10.0)
    post = math.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
    assert post <= 10.0 + 1e-12


def _one_param_optimizer(value, config):
    w = Tensor(np.array([value]), requires_grad=True)
    return w, AdamEma({"w": w}, config)


def test_adam_zero_gradients_leave_parameters_and_ema_unchanged():
    cfg = TrainConfig()
    w, opt = _one_param_optimizer(1.5, cfg)
    for _ in range(5):
        opt.step({"w": np.zeros(1)}, lr=0.1)
    assert w.data.tolist() == [1.5]
    assert np.allclose(opt.ema_values()["w"], [1.5], rtol=1e-12)


def test_adam_two_steps_match_hand_recurrence():
    cfg = TrainConfig()
    w, opt = _one_param_optimizer(1.0, cfg)
    feed = [np.array([0.5]), np.array([-1.0])]
    opt.step({"w": feed[0]}, lr=0.1)
    opt.step({"w": feed[1]}, lr=0.1)

    # hand-applied Adam recurrences
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    theta, m, v = 1.0, 0.0, 0.0
    for t, g in enumerate(feed, start=1):
        g = float(g[0])
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= 0.1 * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    assert w.data[0] == pytest.approx(theta, rel=1e-12)


def test_ema_matches_closed_form_weighted_average():
    cfg = TrainConfig(ema_decay=0.9)
    w, opt = _one_param_optimizer(0.0, cfg)
    rng = np.random.default_rng(3)
    trajectory = []
    for _ in range(7):
        opt.step({"w": rng.standard_normal(1)}, lr=0.05)
        trajectory.append(float(w.data[0]))
    d = 0.9
    t = len(trajectory)
    weighted = sum((1 - d) * d ** (t - 1 - i) * theta for i, theta in enumerate(trajectory))
    oracle = weighted / (1 - d ** t)
    assert opt.ema_values()["w"][0] == pytest.approx(oracle, rel=1e-12)


def test_using_ema_swaps_and_restores():
    # two steps: after a single step the de-biased shadow still equals
    # the parameter itself, so the swap would be invisible
    cfg = TrainConfig(ema_decay=0.5)
    w, opt = _one_param_optimizer(2.0, cfg)
    opt.step({"w": np.array([1.0])}, lr=0.5)
    opt.step({"w": np.array([-1.0])}, lr=0.5)
    raw = w.data.copy()
    with opt.using_ema():
        assert not np.array_equal(w.data, raw)
    assert np.array_equal(w.data, raw)


def _tiny_corpus():
    return [merge_entities(six_token_doc())]


def _fast_config(**kw):
    base = dict(word_dim=6, position_dim=3, gcnn_dim=12, mil_dim=8, gcnn_blocks=1,
                position_clamp=8, batch_size=4, max_epochs=2, patience=5,
                learning_rate=5e-3, dropout_input=0.1, dropout_gcnn=0.05,
                dropout_mil=0.05)
    base.update(kw)
    return TrainConfig(**base)


def test_derive_relation_vocab():
    assert derive_relation_vocab(_tiny_corpus()) == ("no_relation", "interacts")


def test_train_requires_nonempty_splits():
    with pytest.raises(ConfigError):
        train([], _tiny_corpus(), _fast_config())


def _counts_for(f1):
    return {0.5: SliceCounts(1, 1, 1), 0.6: SliceCounts(3, 2, 2)}[f1]


def test_early_stopping_patience_arithmetic(monkeypatch):
    sequence = [0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6]
    calls = iter(sequence)

    def fake_evaluate(model, docs, pairs_by_doc=None, states=None):
        return EvalReport(overall=_counts_for(next(calls)))

    monkeypatch.setattr(training, "evaluate", fake_evaluate)
    docs = _tiny_corpus()
    result = train(docs, docs, _fast_config(max_epochs=50, patience=5))
    assert len(result.epochs) == 7  # stops after epoch 7
    assert result.best_epoch == 2
    assert result.best_f1 == pytest.approx(0.6)
    assert result.stopped_early


def test_lr_decays_per_epoch():
    docs = _tiny_corpus()
    cfg = _fast_config(max_epochs=3, lr_decay=0.5)
    result = train(docs, docs, cfg)
    lrs = [e["lr"] for e in result.epochs]
    assert lrs == [5e-3, 2.5e-3, 1.25e-3]


def test_train_determinism_bit_identical_checkpoints(tmp_path, synth_corpus):
    docs = synth_corpus["docs"][:8]
    cfg = _fast_config(max_epochs=2)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    train(docs, docs, cfg, seed=3, out_dir=out_a)
    train(docs, docs, cfg, seed=3, out_dir=out_b)
    files_a = sorted(p.name for p in (out_a / "checkpoint").iterdir())
    files_b = sorted(p.name for p in (out_b / "checkpoint").iterdir())
    assert files_a == files_b
    for name in files_a:
        assert (out_a / "checkpoint" / name).read_bytes() == \
            (out_b / "checkpoint" / name).read_bytes()
    assert (out_a / "metrics.jsonl").read_bytes() == (out_b / "metrics.jsonl").read_bytes()


def test_different_seeds_differ(synth_corpus):
    docs = synth_corpus["docs"][:6]
    cfg = _fast_config(max_epochs=1)
    r1 = train(docs, docs, cfg, seed=1)
    r2 = train(docs, docs, cfg, seed=2)
    a = r1.model.param_values()["mil.biaffine"]
    b = r2.model.param_values()["mil.biaffine"]
    assert not np.array_equal(a, b)


def test_checkpoint_roundtrip_evaluation_identical(tmp_path, synth_corpus):
    docs = synth_corpus["docs"][:8]
    cfg = _fast_config(max_epochs=2)
    result = train(docs, docs, cfg, seed=5)
    before = evaluate(result.model, docs)
    ckpt = save_checkpoint(tmp_path / "ck", result.model, result.best_epoch, result.best_f1)
    loaded, manifest = load_checkpoint(ckpt)
    after = evaluate(loaded, docs)
    assert before.to_jsonable() == after.to_jsonable()
    assert manifest["best_epoch"] == result.best_epoch
    assert manifest["dev_f1"] == result.best_f1
    for name, value in result.model.param_values().items():
        assert np.array_equal(loaded.param_values()[name], value)


def test_param_blob_format(tmp_path):
    import struct

    data = np.arange(6, dtype=np.float64).reshape(2, 3) + 0.25
    from docgcn.checkpoint import write_param_blob
    path = tmp_path / "p.bin"
    write_param_blob(path, "embed.word", data)
    blob = path.read_bytes()
    name_len = struct.unpack_from("<Q", blob, 0)[0]
    assert blob[8:8 + name_len] == b"embed.word"
    rank = struct.unpack_from("<Q", blob, 8 + name_len)[0]
    assert rank == 2
    extents = struct.unpack_from("<2Q", blob, 16 + name_len)
    assert extents == (2, 3)
    payload = np.frombuffer(blob, dtype="<f8", offset=16 + name_len + 16)
    assert np.array_equal(payload.reshape(2, 3), data)
    name, back = read_param_blob(path)
    assert name == "embed.word"
    assert np.array_equal(back, data)


def test_metrics_log_written(tmp_path, synth_corpus):
    docs = synth_corpus["docs"][:6]
    train(docs, docs, _fast_config(max_epochs=2), seed=1, out_dir=tmp_path / "run")
    lines = (tmp_path / "run" / "metrics.jsonl").read_text().strip().splitlines()
    assert len(lines) == 2
    entry = json.loads(lines[0])
    assert {"epoch", "lr", "train_loss", "dev_f1"} <= set(entry)
    assert (tmp_path / "run" / "config.json").exists()


def test_mention_mean_mode_trains(synth_corpus):
    docs = synth_corpus["docs"][:4]
    cfg = _fast_config(max_epochs=1, mention_mode="mention-mean")
    result = train(docs, docs, cfg, seed=1)
    assert len(result.epochs) == 1


def test_merge_train_dev_adds_training_pairs(synth_corpus):
    train_docs = synth_corpus["docs"][:4]
    dev_docs = synth_corpus["docs"][4:8]
    cfg = _fast_config(max_epochs=1)
    plain = train(train_docs, dev_docs, cfg, seed=2)
    merged = train(train_docs, dev_docs, cfg.replace(merge_train_dev=True), seed=2)
    # the merged run optimises over more pairs, so its loss trace differs
    assert plain.epochs[0]["train_loss"] != merged.epochs[0]["train_loss"]


def test_divergence_is_reported_with_batch(synth_corpus):
    docs = synth_corpus["docs"][:4]
    cfg = _fast_config(max_epochs=3, learning_rate=1e28, grad_clip=1e30)
    with pytest.raises(TrainingDiverged, match="batch"):
        train(docs, docs, cfg, seed=1)


def test_run_seeds_determinism_and_aggregate(synth_corpus):
    docs = synth_corpus["docs"][:6]
    cfg = _fast_config(max_epochs=1)
    report = run_seeds(docs, docs, cfg, seeds=(4, 4))
    assert report.runs[0].f1 == report.runs[1].f1  # same seed: identical metrics
    r2 = run_seeds(docs, docs, cfg, seeds=(4, 4))
    assert report.to_jsonable() == r2.to_jsonable()


def test_run_seeds_mean():
    runs = [("a", 0.5), ("b", 0.7)]
    from docgcn.training import SeedReport, SeedRun
    report = SeedReport(
        runs=[SeedRun(seed=i, ok=True, f1=f) for i, (_, f) in enumerate(runs)],
        mean={"f1": 0.6, "precision": 0.0, "recall": 0.0},
        std={"f1": 0.1, "precision": 0.0, "recall": 0.0},
    )
    assert report.mean["f1"] == pytest.approx(0.6)


def test_run_seeds_partial_failure(monkeypatch, synth_corpus):
    docs = synth_corpus["docs"][:4]
    cfg = _fast_config(max_epochs=1)
    real_train = training.train
    calls = {"n": 0}

    def flaky_train(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 1:
            raise TrainingDiverged("injected failure")
        return real_train(*args, **kwargs)

    monkeypatch.setattr(training, "train", flaky_train)
    report = run_seeds(docs, docs, cfg, seeds=(1, 2))
    assert [r.ok for r in report.runs] == [False, True]
    assert "injected failure" in report.runs[0].error
    assert report.mean["f1"] == report.runs[1].f1
