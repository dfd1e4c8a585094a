"""Argument-structure features: proposition n-grams, support-link bigrams and graph motifs."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import Debate, PropositionType, Utterance

P = PropositionType
Gram = tuple[PropositionType, ...]

MOTIF_NAMES = (
    "basic",
    "regular_convergent",
    "regular_divergent",
    "multi_convergent",
    "multi_divergent",
)


@dataclass(frozen=True)
class Vocabulary:
    unigrams: tuple[Gram, ...]
    bigrams: tuple[Gram, ...]
    trigrams: tuple[Gram, ...]
    link_bigrams: tuple[Gram, ...]

    def __post_init__(self):
        for name in ("unigrams", "bigrams", "trigrams", "link_bigrams"):
            grams = tuple(
                (g,) if isinstance(g, (P, str)) else tuple(g) for g in getattr(self, name)
            )
            grams = tuple(tuple(P(t) for t in g) for g in grams)
            if len(set(grams)) != len(grams):
                raise ValueError(f"duplicate entries in {name}")
            object.__setattr__(self, name, grams)

    def ngrams(self, n: int) -> tuple[Gram, ...]:
        return {1: self.unigrams, 2: self.bigrams, 3: self.trigrams}[n]

    @property
    def dim(self) -> int:
        return (
            len(self.unigrams) + len(self.bigrams) + len(self.trigrams)
            + len(self.link_bigrams) + len(MOTIF_NAMES)
        )

    def groups(self) -> dict[str, slice]:
        """Slot ranges of the feature groups that can be ablated."""
        n_prop = len(self.unigrams) + len(self.bigrams) + len(self.trigrams)
        n_link = len(self.link_bigrams)
        return {
            "prop_ngrams": slice(0, n_prop),
            "link_ngrams": slice(n_prop, n_prop + n_link),
            "graph": slice(n_prop + n_link, n_prop + n_link + len(MOTIF_NAMES)),
        }

    def slot_names(self) -> list[str]:
        def j(g):
            return "_".join(t.value for t in g)

        names = [f"uni_{j(g)}" for g in self.unigrams]
        names += [f"bi_{j(g)}" for g in self.bigrams]
        names += [f"tri_{j(g)}" for g in self.trigrams]
        names += [f"link_{j(g)}" for g in self.link_bigrams]
        names += [f"graph_{m}" for m in MOTIF_NAMES]
        return names

    def to_json(self) -> dict:
        return {
            name: [[t.value for t in g] for g in getattr(self, name)]
            for name in ("unigrams", "bigrams", "trigrams", "link_bigrams")
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(**{k: obj[k] for k in ("unigrams", "bigrams", "trigrams", "link_bigrams")})

    def dumps(self) -> str:
        return json.dumps(self.to_json())


UNIGRAMS = (P.POLICY, P.VALUE, P.FACT, P.TESTIMONY, P.REFERENCE)

DEFAULT_VOCAB = Vocabulary(
    unigrams=UNIGRAMS,
    bigrams=(
        (P.VALUE, P.VALUE), (P.TESTIMONY, P.VALUE), (P.VALUE, P.TESTIMONY), (P.VALUE, P.POLICY),
        (P.POLICY, P.VALUE), (P.FACT, P.VALUE), (P.VALUE, P.FACT), (P.TESTIMONY, P.TESTIMONY),
    ),
    trigrams=(
        (P.VALUE, P.VALUE, P.VALUE), (P.TESTIMONY, P.VALUE, P.VALUE),
        (P.VALUE, P.VALUE, P.POLICY), (P.VALUE, P.VALUE, P.TESTIMONY),
        (P.VALUE, P.TESTIMONY, P.VALUE), (P.FACT, P.VALUE, P.VALUE),
        (P.POLICY, P.VALUE, P.VALUE), (P.VALUE, P.FACT, P.VALUE),
        (P.VALUE, P.POLICY, P.VALUE), (P.VALUE, P.VALUE, P.FACT),
    ),
    link_bigrams=(
        (P.VALUE, P.VALUE), (P.VALUE, P.POLICY), (P.FACT, P.VALUE), (P.TESTIMONY, P.VALUE),
    ),
)


def _windows(seq: Sequence[PropositionType], n: int) -> list[Gram]:
    return [tuple(seq[i:i + n]) for i in range(len(seq) - n + 1)]


def _freq(observed: Sequence[Gram], slots: Sequence[Gram]) -> np.ndarray:
    out = np.zeros(len(slots))
    if not observed:
        return out
    counts = Counter(observed)
    total = len(observed)
    for k, g in enumerate(slots):
        out[k] = counts.get(g, 0) / total
    return out


def proposition_ngram_freq(
    prop_types: Sequence[PropositionType], n: int, vocab: Vocabulary = DEFAULT_VOCAB
) -> np.ndarray:
    """Relative frequency of each vocabulary n-gram among all length-``n`` windows.

    Out-of-vocabulary windows still count towards the denominator.
    """
    if n not in (1, 2, 3):
        raise ValueError(f"n must be 1, 2 or 3, got {n}")
    return _freq(_windows([P(t) for t in prop_types], n), vocab.ngrams(n))


def link_pairs(u: Utterance) -> list[Gram]:
    return [(u.prop_types[e.src], u.prop_types[e.dst]) for e in u.edges]


def link_bigram_freq(u: Utterance, vocab: Vocabulary = DEFAULT_VOCAB) -> np.ndarray:
    return _freq(link_pairs(u), vocab.link_bigrams)


def _degrees(u: Utterance) -> tuple[np.ndarray, np.ndarray]:
    n = len(u.sentences)
    d_in = np.zeros(n, dtype=int)
    d_out = np.zeros(n, dtype=int)
    for e in u.edges:
        d_out[e.src] += 1
        d_in[e.dst] += 1
    return d_in, d_out


def graph_motif_indicators(u: Utterance) -> np.ndarray:
    """Binary presence of [basic, regular convergent, regular divergent,
    multi convergent, multi divergent] structures, decided from node degrees."""
    if not u.edges:
        return np.zeros(len(MOTIF_NAMES))
    d_in, d_out = _degrees(u)
    basic = any(d_out[e.src] == 1 and d_in[e.dst] == 1 for e in u.edges)
    return np.array(
        [basic, (d_in == 2).any(), (d_out == 2).any(), (d_in > 2).any(), (d_out > 2).any()],
        dtype=float,
    )


def motif_diagnostics(u: Utterance) -> dict[str, int]:
    """Motif counts, including serial and linked structures that never enter the feature vector.

    Linked arguments (a,c -> b) cannot be told apart from convergent ones in an
    edge list, so ``linked`` mirrors the convergent count.
    """
    d_in, d_out = _degrees(u) if u.sentences else (np.zeros(0, int), np.zeros(0, int))
    succ: dict[int, list[int]] = {}
    for e in u.edges:
        succ.setdefault(e.src, []).append(e.dst)
    serial = sum(
        1 for e in u.edges for c in succ.get(e.dst, ()) if c != e.src
    )
    convergent = int((d_in >= 2).sum())
    return {
        "basic": sum(1 for e in u.edges if d_out[e.src] == 1 and d_in[e.dst] == 1),
        "regular_convergent": int((d_in == 2).sum()),
        "regular_divergent": int((d_out == 2).sum()),
        "multi_convergent": int((d_in > 2).sum()),
        "multi_divergent": int((d_out > 2).sum()),
        "serial": serial,
        "linked": convergent,
    }


def assemble_features(u: Utterance, vocab: Vocabulary = DEFAULT_VOCAB) -> np.ndarray:
    return np.concatenate(
        [
            proposition_ngram_freq(u.prop_types, 1, vocab),
            proposition_ngram_freq(u.prop_types, 2, vocab),
            proposition_ngram_freq(u.prop_types, 3, vocab),
            link_bigram_freq(u, vocab),
            graph_motif_indicators(u),
        ]
    )


def side_mean_features(d: Debate, side: int, vocab: Vocabulary = DEFAULT_VOCAB) -> np.ndarray:
    """Mean feature vector over one side's utterances."""
    return np.mean([assemble_features(u, vocab) for u in d.utterances(side)], axis=0)


def _debate_grams(d: Debate) -> tuple[set, set, set]:
    bi, tri, link = set(), set(), set()
    for u in d.utterances():
        bi.update(_windows(u.prop_types, 2))
        tri.update(_windows(u.prop_types, 3))
        link.update(link_pairs(u))
    return bi, tri, link


def build_vocabulary(training: Sequence[Debate], threshold: float = 0.03) -> Vocabulary:
    """Keep n-grams whose document frequency over training debates is at least ``threshold``.

    Unigrams are always kept. Each list is ordered by descending document
    frequency, ties broken on the type names.
    """
    if not training:
        raise ValueError("cannot build a vocabulary from an empty training set")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    df = [Counter(), Counter(), Counter()]
    for d in training:
        for counter, grams in zip(df, _debate_grams(d)):
            counter.update(grams)
    n = len(training)

    def select(counter: Counter) -> tuple[Gram, ...]:
        kept = [g for g, c in counter.items() if c / n >= threshold]
        return tuple(sorted(kept, key=lambda g: (-counter[g], [t.value for t in g])))

    return Vocabulary(UNIGRAMS, select(df[0]), select(df[1]), select(df[2]))


def features_csv(debates: Iterable[Debate], vocab: Vocabulary = DEFAULT_VOCAB) -> str:
    """One CSV row per utterance with a header naming every slot."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["debate_id", "round", "side"] + vocab.slot_names())
    for d in debates:
        for i, r in enumerate(d.rounds):
            for side, u in (("pro", r.pro), ("con", r.con)):
                writer.writerow([d.id, i, side] + [repr(float(v)) for v in assemble_features(u, vocab)])
    return buf.getvalue()
