import numpy as np
import pytest

from docgcn.errors import GraphBuildError
from docgcn.graph import (
    ADJ_SENT, ADJ_WORD, CATEGORIES, COREF, DEP, FORWARD, REVERSE, SELF, SELF_DIR,
    EdgeType, EdgeTypeVocabulary, build_graph, edge_statistics, fit_vocabulary,
    group_messages,
)
from helpers import six_token_doc


def test_full_graph_edge_counts():
    g = build_graph(six_token_doc())
    counts = g.counts_by_category()
    assert counts == {DEP: 4, ADJ_WORD: 4, SELF: 6, ADJ_SENT: 1, COREF: 1}
    assert len(g.edges) == 16


def test_self_only_graph():
    g = build_graph(six_token_doc(), enabled={SELF})
    assert len(g.edges) == 6
    assert all(e.src == e.dst for e in g.edges)


def test_single_sentence_doc_has_no_adjacent_sentence_edges():
    doc = six_token_doc()
    doc = type(doc)(**{**doc.__dict__, "sentences": ((0, 6),), "sentence_roots": (1,),
                       "dep_arcs": ()})
    g = build_graph(doc, enabled={ADJ_SENT})
    assert len(g.edges) == 0


def test_empty_category_set_refused():
    with pytest.raises(GraphBuildError):
        build_graph(six_token_doc(), enabled=set())


def test_unknown_category_refused():
    with pytest.raises(GraphBuildError):
        build_graph(six_token_doc(), enabled={"telepathy"})


def test_missing_roots_refused_for_adjacent_sentence():
    doc = six_token_doc()
    doc = type(doc)(**{**doc.__dict__, "sentence_roots": ()})
    with pytest.raises(GraphBuildError):
        build_graph(doc, enabled={ADJ_SENT})
    # but fine when the category is ablated
    build_graph(doc, enabled={SELF})


def test_subset_graph_is_restriction_of_full_graph():
    doc = six_token_doc()
    full = build_graph(doc)
    for cats in ({DEP}, {SELF, COREF}, {ADJ_WORD, ADJ_SENT}, set(CATEGORIES)):
        sub = build_graph(doc, enabled=cats)
        expected = [e for e in full.edges if e.etype.category in cats]
        assert sorted(sub.edges) == sorted(expected)


def test_coref_chain_vs_clique_wiring():
    doc = six_token_doc()
    chain3 = (((0, 1), (3, 4), (5, 6)),)
    doc = type(doc)(**{**doc.__dict__, "coref_chains": chain3})
    chain = build_graph(doc, enabled={COREF})
    assert [(e.src, e.dst) for e in chain.edges] == [(0, 3), (3, 5)]
    clique = build_graph(doc, enabled={COREF}, coref_clique=True)
    assert [(e.src, e.dst) for e in clique.edges] == [(0, 3), (0, 5), (3, 5)]


def test_closed_form_counts_on_random_documents(synth_corpus):
    for doc in synth_corpus["docs"]:
        g = build_graph(doc)
        counts = g.counts_by_category()
        assert counts[SELF] == doc.n
        assert counts[ADJ_WORD] == sum(hi - lo - 1 for lo, hi in doc.sentences)
        assert counts[ADJ_SENT] == len(doc.sentences) - 1
        assert counts[DEP] == len(doc.dep_arcs)
        assert counts[COREF] == sum(len(c) - 1 for c in doc.coref_chains)


def test_incidence_covers_every_edge_once():
    g = build_graph(six_token_doc())
    fwd, rev, self_ = g.incidence()
    flat_fwd = sorted(i for lst in fwd for i in lst)
    flat_rev = sorted(i for lst in rev for i in lst)
    flat_self = sorted(i for lst in self_ for i in lst)
    non_self = sorted(i for i, e in enumerate(g.edges) if e.etype.category != SELF)
    assert flat_fwd == non_self
    assert flat_rev == non_self
    assert flat_self == sorted(i for i, e in enumerate(g.edges) if e.etype.category == SELF)


FREQS = [
    (EdgeType(SELF), 60),
    (EdgeType(ADJ_WORD), 50),
    (EdgeType(DEP, "dobj"), 10),
    (EdgeType(DEP, "nsubj"), 8),
    (EdgeType(ADJ_SENT), 5),
    (EdgeType(COREF), 3),
    (EdgeType(DEP, "amod"), 2),
]


def test_vocabulary_top4_buckets():
    vocab = EdgeTypeVocabulary(FREQS, top_n=4)
    own = {t for t, _ in FREQS if vocab.bucket_of(t) is not None
           and vocab.bucket_of(t) != vocab.rare_bucket}
    assert own == {EdgeType(SELF), EdgeType(ADJ_WORD), EdgeType(DEP, "dobj"),
                   EdgeType(DEP, "nsubj")}
    rare = {t for t, _ in FREQS if vocab.bucket_of(t) == vocab.rare_bucket}
    assert rare == {EdgeType(ADJ_SENT), EdgeType(COREF), EdgeType(DEP, "amod")}
    assert vocab.n_buckets == 5  # 4 own + RARE


def test_vocabulary_n_zero_everything_rare():
    vocab = EdgeTypeVocabulary(FREQS, top_n=0)
    assert vocab.n_buckets == 1
    assert all(vocab.bucket_of(t) == vocab.rare_bucket for t, _ in FREQS)


def test_vocabulary_n_covers_all_no_rare():
    vocab = EdgeTypeVocabulary(FREQS, top_n=7)
    assert vocab.n_buckets == 7
    assert vocab.rare_bucket is None


def test_direction_separates_slots():
    vocab = EdgeTypeVocabulary(FREQS, top_n=4)
    t = EdgeType(DEP, "dobj")
    assert vocab.slot_of(t, FORWARD) != vocab.slot_of(t, REVERSE)
    assert vocab.slot_of(t, FORWARD) != vocab.slot_of(t, SELF_DIR)


def test_unseen_label_maps_to_rare():
    vocab = EdgeTypeVocabulary(FREQS, top_n=4)
    unseen = EdgeType(DEP, "xcomp-rare")
    for direction in (FORWARD, REVERSE, SELF_DIR):
        assert vocab.slot_of(unseen, direction) == \
            vocab.rare_bucket * 3 + direction


def test_unseen_type_without_rare_bucket_is_dropped():
    vocab = EdgeTypeVocabulary(FREQS, top_n=7)
    assert vocab.bucket_of(EdgeType(DEP, "xcomp-rare")) is None


def test_slot_count_bound():
    vocab = EdgeTypeVocabulary(FREQS, top_n=4)
    assert vocab.n_buckets == 5
    used = {vocab.slot_of(t, d) for t, _ in FREQS for d in (FORWARD, REVERSE, SELF_DIR)}
    assert vocab.n_slots == 15
    assert len(used) <= 15


def test_fit_vocabulary_ranking_and_tiebreak(synth_corpus):
    graphs = [build_graph(d) for d in synth_corpus["docs"]]
    vocab = fit_vocabulary(graphs, top_n=4)
    freqs = [c for _, c in vocab.ranked]
    assert freqs == sorted(freqs, reverse=True)
    # equal-frequency neighbours must be ordered by (category, label)
    for (t1, c1), (t2, c2) in zip(vocab.ranked, vocab.ranked[1:]):
        if c1 == c2:
            assert (t1.category, t1.label or "") < (t2.category, t2.label or "")


def test_fit_vocabulary_order_independent(synth_corpus):
    graphs = [build_graph(d) for d in synth_corpus["docs"]]
    a = fit_vocabulary(graphs, top_n=3)
    b = fit_vocabulary(list(reversed(graphs)), top_n=3)
    assert a.ranked == b.ranked
    assert a._buckets == b._buckets


def test_dep_pool_keeps_structural_buckets():
    vocab = EdgeTypeVocabulary(FREQS, top_n=1, pool="dep")
    # 4 structural + 1 top dep + RARE
    assert vocab.bucket_of(EdgeType(SELF)) != vocab.rare_bucket
    assert vocab.bucket_of(EdgeType(COREF)) != vocab.rare_bucket
    assert vocab.bucket_of(EdgeType(DEP, "dobj")) != vocab.rare_bucket
    assert vocab.bucket_of(EdgeType(DEP, "nsubj")) == vocab.rare_bucket
    assert vocab.n_buckets == 6


def test_vocabulary_json_roundtrip():
    vocab = EdgeTypeVocabulary(FREQS, top_n=4)
    again = EdgeTypeVocabulary.from_jsonable(vocab.to_jsonable())
    assert again.ranked == vocab.ranked
    assert again._buckets == vocab._buckets
    assert again.n_slots == vocab.n_slots


def test_group_messages_accounts_for_every_edge():
    doc = six_token_doc()
    g = build_graph(doc)
    vocab = fit_vocabulary([g], top_n=4)
    groups = group_messages(g, vocab)
    total = sum(len(grp.src) for grp in groups)
    n_self = g.counts_by_category()[SELF]
    assert total == n_self + 2 * (len(g.edges) - n_self)
    assert [grp.slot for grp in groups] == sorted({grp.slot for grp in groups})
    for grp in groups:
        assert grp.src.dtype == np.int64
        assert len(grp.src) == len(grp.dst)


def test_edge_statistics_report(synth_corpus):
    graphs = [build_graph(d) for d in synth_corpus["docs"]]
    stats = edge_statistics(graphs)
    assert stats["documents"] == len(graphs)
    assert stats["edges"] == sum(len(g.edges) for g in graphs)
    assert set(stats["by_category"]) == set(CATEGORIES)
