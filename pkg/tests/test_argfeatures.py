import itertools
import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from argpersuasion.argfeatures import (
    DEFAULT_VOCAB,
    Vocabulary,
    assemble_features,
    build_vocabulary,
    features_csv,
    graph_motif_indicators,
    link_bigram_freq,
    motif_diagnostics,
    proposition_ngram_freq,
)
from argpersuasion.corpus import PropositionType as P

from conftest import debate, utt

TYPES = list(P)
type_seqs = st.lists(st.sampled_from(TYPES), max_size=12)


def slot(vocab, name):
    return vocab.slot_names().index(name)


def test_figure_one_bigram_values():
    seq = [P.POLICY, P.VALUE, P.VALUE, P.VALUE, P.VALUE]
    freq = proposition_ngram_freq(seq, 2, DEFAULT_VOCAB)
    bigrams = DEFAULT_VOCAB.bigrams
    assert freq[bigrams.index((P.POLICY, P.VALUE))] == 0.25
    assert freq[bigrams.index((P.VALUE, P.VALUE))] == 0.75
    assert freq.sum() == 1.0


@pytest.mark.parametrize("n", [1, 2, 3])
def test_empty_sequence_all_zero(n):
    assert not proposition_ngram_freq([], n).any()


def test_single_trigram_window():
    freq = proposition_ngram_freq([P.VALUE, P.TESTIMONY, P.VALUE], 3)
    expected = np.zeros(len(DEFAULT_VOCAB.trigrams))
    expected[DEFAULT_VOCAB.trigrams.index((P.VALUE, P.TESTIMONY, P.VALUE))] = 1.0
    np.testing.assert_array_equal(freq, expected)


def test_bad_n():
    with pytest.raises(ValueError):
        proposition_ngram_freq([P.VALUE], 4)


def full_vocab(n):
    grams = tuple(itertools.product(TYPES, repeat=n))
    return Vocabulary(TYPES, grams if n == 2 else (), grams if n == 3 else (), ())


@given(type_seqs, st.sampled_from([1, 2, 3]))
def test_ngram_frequencies_sum(seq, n):
    unfiltered = proposition_ngram_freq(seq, n, full_vocab(n))
    filtered = proposition_ngram_freq(seq, n, DEFAULT_VOCAB)
    if len(seq) >= n:
        assert unfiltered.sum() == pytest.approx(1.0)
    else:
        assert unfiltered.sum() == 0
    assert filtered.sum() <= unfiltered.sum() + 1e-12


def test_link_bigrams_two_edges():
    u = utt(["fact", "value", "value"], [(0, 1), (2, 1)])
    freq = link_bigram_freq(u)
    links = DEFAULT_VOCAB.link_bigrams
    assert freq[links.index((P.FACT, P.VALUE))] == 0.5
    assert freq[links.index((P.VALUE, P.VALUE))] == 0.5


def test_link_bigrams_none():
    assert not link_bigram_freq(utt(["fact", "value"])).any()


def test_link_bigram_single_testimony():
    freq = link_bigram_freq(utt(["testimony", "value"], [(0, 1)]))
    assert freq.tolist() == [0, 0, 0, 1.0]


@st.composite
def graphs(draw, max_nodes=6):
    n = draw(st.integers(1, max_nodes))
    pairs = [(a, b) for a in range(n) for b in range(n) if a != b]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs))) if pairs else []
    types = draw(st.lists(st.sampled_from(TYPES), min_size=n, max_size=n))
    return types, edges


@given(graphs())
def test_link_freq_permutation_invariant(g):
    types, edges = g
    a = link_bigram_freq(utt(types, edges))
    b = link_bigram_freq(utt(types, edges[::-1]))
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize(
    "n, edges, expected",
    [
        (3, [(0, 1), (1, 2)], [1, 0, 0, 0, 0]),
        (3, [(0, 2), (1, 2)], [0, 1, 0, 0, 0]),
        (4, [(0, 1), (0, 2), (0, 3)], [0, 0, 0, 0, 1]),
        (3, [], [0, 0, 0, 0, 0]),
        (4, [(1, 0), (2, 0), (3, 0)], [0, 0, 0, 1, 0]),
        (3, [(1, 0), (1, 2)], [0, 0, 1, 0, 0]),
    ],
)
def test_motif_examples(n, edges, expected):
    assert graph_motif_indicators(utt(["value"] * n, edges)).tolist() == expected


@settings(max_examples=200)
@given(graphs(), st.randoms(use_true_random=False))
def test_motifs_invariant_under_relabeling(g, rnd):
    types, edges = g
    n = len(types)
    perm = list(range(n))
    rnd.shuffle(perm)
    relabeled = [(perm[a], perm[b]) for a, b in edges]
    np.testing.assert_array_equal(
        graph_motif_indicators(utt(types, edges)),
        graph_motif_indicators(utt([types[perm.index(i)] for i in range(n)], relabeled)),
    )


def test_motif_diagnostics_serial_and_linked():
    diag = motif_diagnostics(utt(["value"] * 4, [(0, 1), (1, 2), (3, 2)]))
    assert diag["serial"] == 1
    assert diag["linked"] == diag["regular_convergent"] == 1


def test_default_vocabulary_layout():
    v = DEFAULT_VOCAB
    assert [len(v.unigrams), len(v.bigrams), len(v.trigrams), len(v.link_bigrams)] == [5, 8, 10, 4]
    assert v.dim == 32
    names = v.slot_names()
    assert names[:5] == ["uni_policy", "uni_value", "uni_fact", "uni_testimony", "uni_reference"]
    assert names[5] == "bi_value_value"
    assert names[-5:] == [
        "graph_basic", "graph_regular_convergent", "graph_regular_divergent",
        "graph_multi_convergent", "graph_multi_divergent",
    ]
    assert "link_fact_value" in names and len(set(names)) == 32


def test_vocabulary_json_round_trip():
    assert Vocabulary.from_json(json.loads(DEFAULT_VOCAB.dumps())) == DEFAULT_VOCAB


def test_vocabulary_rejects_duplicates():
    with pytest.raises(ValueError):
        Vocabulary([P.VALUE, P.VALUE], [], [], [])


def test_assemble_empty():
    v = assemble_features(utt([]))
    assert v.shape == (32,) and not v.any()


def test_assemble_worked_example():
    v = assemble_features(utt(["policy", "value", "value", "value", "value"]))
    names = DEFAULT_VOCAB.slot_names()
    expected = dict.fromkeys(names, 0.0)
    expected.update({
        "uni_policy": 0.2, "uni_value": 0.8,
        "bi_policy_value": 0.25, "bi_value_value": 0.75,
        "tri_value_value_value": 2 / 3, "tri_policy_value_value": 1 / 3,
    })
    np.testing.assert_allclose(v, [expected[n] for n in names], rtol=0, atol=1e-15)


@given(graphs(max_nodes=8))
def test_assemble_range(g):
    v = assemble_features(utt(*g))
    assert v.shape == (32,)
    assert ((v >= 0) & (v <= 1)).all()
    assert set(v[-5:]) <= {0.0, 1.0}


# -- vocabulary building -------------------------------------------------------


def test_build_keeps_ubiquitous_bigram():
    ds = [debate(f"d{i}", rounds=[(utt(["value", "value"]), utt(["fact"]))]) for i in range(10)]
    vocab = build_vocabulary(ds)
    assert (P.VALUE, P.VALUE) in vocab.bigrams
    assert vocab.unigrams == DEFAULT_VOCAB.unigrams


def test_build_drops_rare_bigram():
    rare = [debate(f"r{i}", rounds=[(utt(["policy", "policy"]), utt(["value", "value"]))]) for i in range(2)]
    common = [debate(f"c{i}", rounds=[(utt(["value", "value"]), utt(["fact"]))]) for i in range(98)]
    vocab = build_vocabulary(rare + common, threshold=0.03)
    assert (P.POLICY, P.POLICY) not in vocab.bigrams
    assert (P.POLICY, P.POLICY) in build_vocabulary(rare + common, threshold=0.02).bigrams


def test_build_threshold_zero_keeps_everything_seen():
    d = debate(rounds=[(utt(["fact", "value", "policy"], [(0, 1)]), utt(["testimony"]))])
    vocab = build_vocabulary([d], threshold=0.0)
    assert set(vocab.bigrams) == {(P.FACT, P.VALUE), (P.VALUE, P.POLICY)}
    assert vocab.trigrams == ((P.FACT, P.VALUE, P.POLICY),)
    assert vocab.link_bigrams == ((P.FACT, P.VALUE),)


def test_build_ordering_by_document_frequency():
    ds = [debate("a", rounds=[(utt(["value", "fact"]), utt(["fact", "value"]))]),
          debate("b", rounds=[(utt(["value", "fact"]), utt(["policy"]))])]
    vocab = build_vocabulary(ds, threshold=0.0)
    assert vocab.bigrams == ((P.VALUE, P.FACT), (P.FACT, P.VALUE))


def test_build_empty_error():
    with pytest.raises(ValueError):
        build_vocabulary([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(type_seqs, min_size=2, max_size=2), min_size=1, max_size=8),
       st.floats(0, 1), st.floats(0, 1))
def test_build_monotone_in_threshold(sides, t1, t2):
    lo, hi = sorted((t1, t2))
    ds = [debate(f"d{i}", rounds=[(utt(a), utt(b))]) for i, (a, b) in enumerate(sides)]
    small, big = build_vocabulary(ds, hi), build_vocabulary(ds, lo)
    for name in ("bigrams", "trigrams", "link_bigrams"):
        assert set(getattr(small, name)) <= set(getattr(big, name))


def test_features_csv_header():
    text = features_csv([debate()])
    header, *rows = text.strip().split("\n")
    assert header.split(",")[:4] == ["debate_id", "round", "side", "uni_policy"]
    assert len(rows) == 2 and len(header.split(",")) == 35
