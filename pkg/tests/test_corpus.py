import copy
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from argpersuasion.corpus import (
    CON,
    PRO,
    PropositionType,
    SupportEdge,
    Utterance,
    debate_from_json,
    dumps_corpus,
    fallback_embed,
    filter_debates,
    filter_with_stats,
    parse_corpus,
    parse_sidecar,
    tokenize,
    validate_graph,
)

from conftest import debate, utt, write_jsonl


def test_proposition_type_inventory():
    assert [p.value for p in PropositionType] == ["policy", "value", "fact", "testimony", "reference"]


def test_parse_minimal_record(tmp_path, tiny_record):
    res = parse_corpus(write_jsonl(tmp_path / "c.jsonl", [tiny_record]))
    assert res.errors == []
    (d,) = res.debates
    assert len(d.rounds) == 1
    assert d.rounds[0].pro.edges == (SupportEdge(1, 0),)
    assert d.label() == PRO


def test_parse_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    res = parse_corpus(path)
    assert res.debates == [] and res.errors == []


def test_parse_rejects_out_of_range_edge(tmp_path, tiny_record):
    bad = copy.deepcopy(tiny_record)
    bad["id"] = "bad"
    bad["rounds"][0]["pro"] = {"sentences": ["a", "b", "c"], "prop_types": ["value"] * 3, "edges": [[5, 0]]}
    res = parse_corpus(write_jsonl(tmp_path / "c.jsonl", [tiny_record, bad]))
    assert [d.id for d in res.debates] == ["d1"]
    assert len(res.errors) == 1
    assert res.errors[0].line == 2
    assert "out of range" in res.errors[0].reason


def test_parse_skips_malformed_lines(tmp_path, tiny_record):
    path = tmp_path / "c.jsonl"
    mismatched = copy.deepcopy(tiny_record)
    mismatched["rounds"][0]["con"]["prop_types"] = ["value"]
    path.write_text("{not json\n" + json.dumps(mismatched) + "\n")
    res = parse_corpus(path)
    assert res.debates == []
    assert [e.line for e in res.errors] == [1, 2]


def test_parse_missing_file(tmp_path):
    with pytest.raises(OSError):
        parse_corpus(tmp_path / "nope.jsonl")


def test_unknown_keys_ignored(tmp_path, tiny_record):
    rec = dict(tiny_record, extra={"x": 1})
    assert len(parse_corpus(write_jsonl(tmp_path / "c.jsonl", [rec])).debates) == 1


def test_round_trip(tmp_path, tiny_record):
    rec = copy.deepcopy(tiny_record)
    rec["rounds"][0]["pro"]["embedding"] = [0.1, -2.5e-17, 3.0]
    first = parse_corpus(write_jsonl(tmp_path / "a.jsonl", [rec, tiny_record])).debates
    (tmp_path / "b.jsonl").write_text(dumps_corpus(first), encoding="utf-8")
    second = parse_corpus(tmp_path / "b.jsonl").debates
    assert first == second
    assert second[0].rounds[0].pro.embedding == (0.1, -2.5e-17, 3.0)


def test_prop_types_must_parallel_sentences():
    with pytest.raises(ValueError):
        Utterance(["a", "b"], [PropositionType.VALUE])


# -- filtering ---------------------------------------------------------------


def test_filter_margin_one_removed():
    assert filter_debates([debate(votes=(5, 4))]) == []


def test_filter_clear_winner_kept():
    d = debate(votes=(6, 3))
    assert filter_debates([d]) == [d]


def test_filter_sentence_cap_boundary():
    ok = debate("ok", votes=(8, 2), rounds=[(utt(["value"] * 40), utt(["fact"]))])
    long = debate("long", votes=(8, 2), rounds=[(utt(["value"]), utt(["fact"] * 41))])
    assert filter_debates([ok, long]) == [ok]


def test_filter_forfeit_flag():
    d = debate(votes=(6, 1), forfeit="con")
    assert filter_debates([d]) == []
    assert filter_debates([d], drop_forfeits=False) == [d]


def test_filter_stats_count_first_failing_rule():
    ds = [debate("a", (3, 3)), debate("b", (9, 1), forfeit="pro"), debate("c", (2, 0))]
    kept, dropped = filter_with_stats(ds)
    assert [d.id for d in kept] == ["c"]
    assert dropped == {"margin": 1, "too_long": 0, "forfeit": 1}


votes = st.tuples(st.integers(0, 12), st.integers(0, 12))


@given(st.lists(st.tuples(votes, st.integers(1, 45), st.sampled_from([None, "pro", "con"])), max_size=12))
def test_filter_idempotent_and_order_preserving(specs):
    ds = [
        debate(f"d{i}", v, rounds=[(utt(["value"] * n), utt(["fact"]))], forfeit=f)
        for i, (v, n, f) in enumerate(specs)
    ]
    once = filter_debates(ds)
    assert filter_debates(once) == once
    positions = [ds.index(d) for d in once]
    assert positions == sorted(positions)
    for d in once:
        assert d.margin >= 2 and d.forfeit is None and d.label() in (PRO, CON)


# -- graph validation ----------------------------------------------------------


def test_validate_chain():
    r = validate_graph(utt(["value"] * 3, [(0, 1), (1, 2)]))
    assert r.valid and not r.has_cycle


def test_validate_two_cycle_flagged_not_rejected():
    r = validate_graph(utt(["value"] * 2, [(0, 1), (1, 0)]))
    assert r.valid and r.has_cycle


def test_validate_self_loop_and_duplicates():
    r = validate_graph(utt(["value"] * 2, [(0, 0), (0, 1), (0, 1)]))
    assert not r.valid
    assert r.self_loops == [SupportEdge(0, 0)]
    assert r.duplicates == [SupportEdge(0, 1)]


def _cycle_by_reachability(n, edges):
    reach = np.zeros((n, n), dtype=bool)
    for a, b in edges:
        reach[a, b] = True
    for k, i, j in itertools.product(range(n), repeat=3):
        reach[i, j] |= reach[i, k] and reach[k, j]
    return bool(np.diag(reach).any())


@settings(max_examples=300)
@given(st.integers(1, 8).flatmap(
    lambda n: st.tuples(st.just(n), st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=16))
))
def test_cycle_flag_matches_reachability(case):
    n, edges = case
    edges = sorted(edges)
    u = utt(["value"] * n, edges)
    assert validate_graph(u).has_cycle == _cycle_by_reachability(n, edges)


# -- fallback embedder ---------------------------------------------------------


def test_embed_empty_is_zero():
    v = fallback_embed(Utterance(), dim=16)
    assert v.shape == (16,) and not v.any()


def test_embed_deterministic():
    a = utt(["value"] * 2, sentences=["Hello there.", "General Kenobi!"])
    b = utt(["value"] * 2, sentences=["Hello there.", "General Kenobi!"])
    assert fallback_embed(a).tobytes() == fallback_embed(b).tobytes()


def test_embed_keeps_last_three_sentences():
    sents = ["One fish.", "Two fish.", "Red fish.", "Blue fish.", "Old fish."]
    full = utt(["value"] * 5, sentences=sents)
    tail = utt(["value"] * 3, sentences=sents[-3:])
    np.testing.assert_array_equal(fallback_embed(full), fallback_embed(tail))
    assert not np.array_equal(fallback_embed(full), fallback_embed(full, last_k=5))


@given(st.lists(st.text(max_size=30), max_size=6))
def test_embed_norm(sentences):
    u = Utterance(sentences, [PropositionType.VALUE] * len(sentences))
    v = fallback_embed(u, dim=64)
    has_tokens = any(tokenize(s) for s in sentences[-3:])
    assert np.linalg.norm(v) == pytest.approx(1.0 if has_tokens else 0.0, abs=1e-12)


def test_embed_bad_args():
    with pytest.raises(ValueError):
        fallback_embed(Utterance(), dim=0)


def test_sidecar(tmp_path):
    path = write_jsonl(tmp_path / "s.jsonl", [{"id": "d1", "pro_features": [1, 2], "con_features": [3, 4], "shared_features": []}])
    side = parse_sidecar(path)
    assert side["d1"].con_features == (3.0, 4.0)


def test_debate_from_json_label(tiny_record):
    d = debate_from_json(dict(tiny_record, votes_pro=1, votes_con=7))
    assert d.label() == CON
    assert debate_from_json(dict(tiny_record, votes_pro=4, votes_con=3)).label() is None
