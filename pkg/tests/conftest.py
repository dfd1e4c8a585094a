import json

import pytest

from argpersuasion.corpus import Debate, PropositionType as P, Round, SupportEdge, Utterance


def utt(types, edges=(), sentences=None, embedding=None):
    types = [P(t) if isinstance(t, str) else t for t in types]
    if sentences is None:
        sentences = [f"Sentence {i} about {t.value}." for i, t in enumerate(types)]
    return Utterance(sentences, types, [SupportEdge(*e) for e in edges], embedding)


def debate(id="d", votes=(5, 2), rounds=None, forfeit=None):
    if rounds is None:
        rounds = [(utt(["value", "fact"]), utt(["policy", "value"]))]
    return Debate(id, "topic", [Round(p, c) for p, c in rounds], votes[0], votes[1], forfeit)


@pytest.fixture
def tiny_record():
    return {
        "id": "d1",
        "topic": "Preschool is a waste of time",
        "rounds": [
            {
                "pro": {"sentences": ["A.", "B."], "prop_types": ["value", "fact"], "edges": [[1, 0]], "embedding": None},
                "con": {"sentences": ["C.", "D."], "prop_types": ["policy", "value"], "edges": [], "embedding": None},
            }
        ],
        "votes_pro": 6,
        "votes_con": 3,
        "forfeit": None,
    }


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path
