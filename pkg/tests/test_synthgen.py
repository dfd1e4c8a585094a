from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from argpersuasion.argfeatures import side_mean_features
from argpersuasion.corpus import CON, PRO, PropositionType as P, filter_debates, validate_graph
from argpersuasion.synthgen import MARKERS, PlantConfig, generate_corpus, generate_debate, manifest


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(PlantConfig(n_debates=300, seed=7))


def test_deterministic():
    cfg = PlantConfig(n_debates=20, seed=3)
    assert generate_corpus(cfg) == generate_corpus(cfg)
    assert generate_corpus(cfg) != generate_corpus(replace(cfg, seed=4))


def test_prefix_stable():
    cfg = PlantConfig(n_debates=30, seed=1)
    assert generate_corpus(replace(cfg, n_debates=10)) == generate_corpus(cfg)[:10]


def test_every_debate_passes_filter_and_graph_checks(corpus):
    assert filter_debates(corpus) == corpus
    for d in corpus:
        assert d.label() is not None
        for u in d.utterances():
            rep = validate_graph(u)
            assert rep.valid and not rep.has_cycle


def test_labels_balanced(corpus):
    pro = sum(d.label() == PRO for d in corpus)
    assert 0.4 < pro / len(corpus) < 0.6


def test_winners_use_more_testimony(corpus):
    def count(side_of):
        return sum(u.prop_types.count(P.TESTIMONY) for d in corpus for u in d.utterances(side_of(d)))

    assert count(lambda d: d.label()) > 1.5 * count(lambda d: 1 - d.label())


def test_markers_name_the_type(corpus):
    u = corpus[0].utterances()[0]
    for s, t in zip(u.sentences, u.prop_types):
        body = s.lower().rstrip(".").removeprefix("clearly ")
        assert body in (MARKERS[t], "this is my point")


def test_null_signal_sides_identical():
    cfg = PlantConfig(signal_strength=0.0)
    win, lose = cfg.side_params(True), cfg.side_params(False)
    for key in win:
        np.testing.assert_array_equal(win[key], lose[key])
    corpus = generate_corpus(replace(cfg, n_debates=400))
    w = np.array([side_mean_features(d, d.label()) for d in corpus])
    l = np.array([side_mean_features(d, 1 - d.label()) for d in corpus])
    # no planted difference: winner and loser means agree within sampling noise
    assert np.abs(w.mean(0) - l.mean(0)).max() < 0.05


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(0, 50))
def test_debate_shape_within_config(seed, index):
    cfg = PlantConfig(seed=seed, rounds=(1, 3), sentences=(2, 5))
    d = generate_debate(cfg, index)
    assert 1 <= len(d.rounds) <= 3
    assert all(2 <= len(u) <= 5 for u in d.utterances())
    assert d.margin >= 2


@pytest.mark.parametrize("bad", [
    dict(winner_types=(1.0, 0.0, 0.0, 0.0)),
    dict(loser_types=(0.5, 0.5, 0.5, 0.0, 0.0)),
    dict(rounds=(0, 2)),
    dict(sentences=(3, 2)),
    dict(base_link=1.5),
    dict(signal_strength=-0.1),
    dict(n_debates=-1),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        PlantConfig(**bad)


def test_manifest_records_plant():
    m = manifest(PlantConfig(seed=9))
    assert m["plant"]["seed"] == 9 and m["seed"] == 9 and m["version"]
