import math

import numpy as np
import pytest

from docgcn import autodiff as ad
from docgcn.autodiff import Tape, Tensor
from docgcn.classifier import (MilClassifier, entity_pair_scores, loss_and_predict)
from docgcn.errors import LabelError, ShapeError
from helpers import biaffine_oracle, max_rel_err, numeric_gradient


def test_project_identity_weights(rng):
    clf = MilClassifier(d_g=3, d_mil=3, n_relations=2, rng=rng)
    for w in (clf.head_w0, clf.head_w1, clf.tail_w0, clf.tail_w1):
        w.data = np.eye(3)
    x = Tensor(np.array([[-1.0, 2.0, 0.5]]))
    head, tail = clf.project(x)
    assert head.data.tolist() == [[0.0, 2.0, 0.5]]
    assert tail.data.tolist() == [[0.0, 2.0, 0.5]]


def test_project_zero_input_zero_output(rng):
    clf = MilClassifier(d_g=4, d_mil=5, n_relations=2, rng=rng)
    head, tail = clf.project(Tensor(np.zeros((3, 4))))
    assert not head.data.any() and not tail.data.any()


def test_project_gradients(rng):
    clf = MilClassifier(d_g=6, d_mil=4, n_relations=2, rng=rng)
    x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)

    def forward():
        h, t = clf.project(x)
        return ad.reduce_sum(ad.add(ad.mul(h, h), ad.mul(t, t)))

    with Tape() as tape:
        loss = forward()
    params = [x, clf.head_w0, clf.head_w1, clf.tail_w0, clf.tail_w1]
    grads = tape.backward(loss, params)
    for p in params:
        fd = numeric_gradient(lambda: forward().item(), p.data)
        assert max_rel_err(grads[p], fd) <= 1e-3


def test_single_pair_score_is_raw_biaffine():
    R = Tensor(np.array([[0.0, 2.0], [3.0, 0.0]]).reshape(2, 1, 2))
    scores = entity_pair_scores(Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]]), R)
    assert scores.data.tolist() == [2.0]


def test_two_identical_pairs_add_ln2():
    # both head rows identical: two (i, j) pairs with the same raw score
    R = Tensor(np.array([[0.0, 2.0], [3.0, 0.0]]).reshape(2, 1, 2))
    scores = entity_pair_scores(Tensor([[1.0, 0.0], [1.0, 0.0]]), Tensor([[0.0, 1.0]]), R)
    assert scores.data[0] == pytest.approx(2.0 + math.log(2.0), abs=1e-12)


def test_scores_match_bruteforce_oracle(rng):
    for _ in range(20):
        d, r = 5, 3
        head = rng.standard_normal((3, d))
        tail = rng.standard_normal((2, d))
        R = rng.standard_normal((d, r, d))
        got = entity_pair_scores(Tensor(head), Tensor(tail), Tensor(R)).data
        assert np.allclose(got, biaffine_oracle(head, tail, R), atol=1e-9)


def test_scores_invariant_to_mention_permutation(rng):
    d, r = 4, 2
    head = rng.standard_normal((4, d))
    tail = rng.standard_normal((3, d))
    R = Tensor(rng.standard_normal((d, r, d)))
    base = entity_pair_scores(Tensor(head), Tensor(tail), R).data
    perm = entity_pair_scores(Tensor(head[::-1].copy()), Tensor(tail[[2, 0, 1]]), R).data
    assert np.allclose(base, perm, atol=1e-12)


def test_duplicate_pair_bounded_by_ln2_and_monotone(rng):
    d, r = 4, 2
    head = rng.standard_normal((3, d))
    tail = rng.standard_normal((2, d))
    R = Tensor(rng.standard_normal((d, r, d)))
    base = entity_pair_scores(Tensor(head), Tensor(tail), R).data
    dup = entity_pair_scores(Tensor(np.vstack([head, head[:1]])), Tensor(tail), R).data
    assert np.all(dup >= base - 1e-12)
    assert np.all(dup - base <= math.log(2.0) + 1e-12)


def test_empty_mention_set_raises(rng):
    R = Tensor(rng.standard_normal((3, 2, 3)))
    with pytest.raises(ShapeError):
        entity_pair_scores(Tensor(np.zeros((0, 3))), Tensor(np.ones((1, 3))), R)


def test_scores_gradients_including_R(rng):
    d, r = 4, 2
    head = Tensor(rng.standard_normal((3, d)), requires_grad=True)
    tail = Tensor(rng.standard_normal((2, d)), requires_grad=True)
    R = Tensor(rng.standard_normal((d, r, d)), requires_grad=True)

    def forward():
        return ad.reduce_sum(entity_pair_scores(head, tail, R))

    with Tape() as tape:
        loss = forward()
    grads = tape.backward(loss, [head, tail, R])
    for p in (head, tail, R):
        fd = numeric_gradient(lambda: forward().item(), p.data)
        assert max_rel_err(grads[p], fd) <= 1e-3


def test_mention_mean_mode(rng):
    clf = MilClassifier(d_g=4, d_mil=4, n_relations=2, rng=rng)
    x = Tensor(rng.standard_normal((6, 4)))
    xh, xt = clf.project(x)
    by_tokens = clf.pair_scores(xh, xt, [0, 1], [4], mention_mode="tokens").data
    by_mentions = clf.pair_scores(
        xh, xt, [0, 1], [4],
        head_spans=[(0, 2)], tail_spans=[(4, 5)], mention_mode="mention-mean",
    ).data
    assert by_tokens.shape == by_mentions.shape == (2,)
    # a single-token mention mean equals the token itself, so only the
    # head aggregation differs
    assert not np.allclose(by_tokens, by_mentions)
    single = clf.pair_scores(
        xh, xt, [0], [4], head_spans=[(0, 1)], tail_spans=[(4, 5)],
        mention_mode="mention-mean",
    ).data
    by_single_tokens = clf.pair_scores(xh, xt, [0], [4], mention_mode="tokens").data
    assert np.allclose(single, by_single_tokens, atol=1e-12)


def test_loss_uniform_scores():
    loss, pred = loss_and_predict(Tensor([0.0, 0.0]), gold=0)
    assert loss.item() == pytest.approx(math.log(2.0), abs=1e-12)
    assert pred == 0  # tie resolves to the lowest index


def test_loss_confident_correct():
    loss, pred = loss_and_predict(Tensor([10.0, -10.0]), gold=0)
    assert pred == 0
    # softmax CE evaluated analytically: log(1 + e^-20)
    assert loss.item() == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-9)
    assert loss.item() == pytest.approx(2.061e-9, rel=1e-3)


def test_loss_wrong_gold_approx_margin():
    margin = 12.0
    loss, pred = loss_and_predict(Tensor([margin, 0.0]), gold=1)
    assert pred == 0
    assert loss.item() == pytest.approx(margin, abs=1e-4)


def test_loss_invalid_gold():
    with pytest.raises(LabelError):
        loss_and_predict(Tensor([0.0, 0.0]), gold=2)
    with pytest.raises(LabelError):
        loss_and_predict(Tensor([0.0, 0.0]), gold=-1)


def test_argmax_invariant_to_constant_shift(rng):
    scores = rng.standard_normal(4)
    _, pred = loss_and_predict(Tensor(scores), gold=0)
    _, pred_shifted = loss_and_predict(Tensor(scores + 100.0), gold=0)
    assert pred == pred_shifted


def test_loss_gradient(rng):
    scores = Tensor(rng.standard_normal(3), requires_grad=True)

    def forward():
        loss, _ = loss_and_predict(scores, gold=1)
        return loss

    with Tape() as tape:
        loss = forward()
    grads = tape.backward(loss, [scores])
    fd = numeric_gradient(lambda: forward().item(), scores.data)
    assert max_rel_err(grads[scores], fd) <= 1e-3
    # softmax gradient sums to zero
    assert abs(grads[scores].sum()) < 1e-12
