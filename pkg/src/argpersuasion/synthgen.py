"""Seeded synthetic debates with planted persuasion signals.

The default plant follows the qualitative DDO findings: winners use more
testimony and less policy, support value claims with facts more often, and
build more divergent arguments. Sentence text is a short placeholder phrase:
sometimes one tied to the proposition type, otherwise a neutral one, and
occasionally a style cue word whose rate depends on the side. The text stream
therefore sees a weak signal, partly shared with the argument features and
partly its own. Phrases come from a tiny fixed inventory so the text carries
no per-debate noise a large encoder could memorise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .corpus import Debate, PropositionType, Round, SupportEdge, Utterance

P = PropositionType
TYPES = (P.POLICY, P.VALUE, P.FACT, P.TESTIMONY, P.REFERENCE)

MARKERS = {
    P.POLICY: "we should change this",
    P.VALUE: "i believe this matters",
    P.FACT: "statistics show this",
    P.TESTIMONY: "personally i have seen this",
    P.REFERENCE: "according to the source",
}
NEUTRAL = "this is my point"
CUE = "clearly"


@dataclass(frozen=True)
class PlantConfig:
    n_debates: int = 500
    rounds: tuple[int, int] = (2, 4)
    sentences: tuple[int, int] = (4, 9)
    # proposition-type distributions, ordered as TYPES
    winner_types: tuple[float, ...] = (0.12, 0.46, 0.20, 0.16, 0.06)
    loser_types: tuple[float, ...] = (0.20, 0.48, 0.20, 0.06, 0.06)
    # probability that an adjacent FACT/VALUE pair gets a fact -> value link
    winner_fact_value: float = 0.9
    loser_fact_value: float = 0.1
    # probability that an utterance contains one planted divergent argument
    winner_divergent: float = 0.45
    loser_divergent: float = 0.15
    # probability that a sentence supports its predecessor (side-independent)
    base_link: float = 0.2
    # probability that a sentence's text names its proposition type
    marker_rate: float = 0.5
    # probability that a sentence carries the style cue word
    winner_cue: float = 0.3
    loser_cue: float = 0.1
    signal_strength: float = 1.0
    seed: int = 42

    def __post_init__(self):
        for name in ("winner_types", "loser_types"):
            dist = np.asarray(getattr(self, name), float)
            if dist.shape != (len(TYPES),) or (dist < 0).any() or not np.isclose(dist.sum(), 1.0):
                raise ValueError(f"{name} must be a distribution over {len(TYPES)} types")
        for name in ("rounds", "sentences"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ValueError(f"{name} range must be non-empty and positive")
        probs = ("winner_fact_value", "loser_fact_value", "winner_divergent", "loser_divergent",
                 "base_link", "marker_rate", "winner_cue", "loser_cue")
        if any(not 0.0 <= getattr(self, name) <= 1.0 for name in probs):
            raise ValueError("link, motif, marker and cue rates must lie in [0, 1]")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError("signal_strength must lie in [0, 1]")
        if self.n_debates < 0:
            raise ValueError("n_debates must be non-negative")

    def side_params(self, winner: bool) -> dict:
        """Generation parameters for one side, shrunk toward the common mean by 1 - signal_strength."""
        s = self.signal_strength

        def mix(w, l):
            w, l = np.asarray(w, float), np.asarray(l, float)
            common = (w + l) / 2
            return common + s * ((w if winner else l) - common)

        types = mix(self.winner_types, self.loser_types)
        return {
            "types": types / types.sum(),
            "fact_value": float(mix(self.winner_fact_value, self.loser_fact_value)),
            "divergent": float(mix(self.winner_divergent, self.loser_divergent)),
            "cue": float(mix(self.winner_cue, self.loser_cue)),
        }

    def to_json(self) -> dict:
        return asdict(self)


def _sentence(ptype: PropositionType, marker_rate: float, cue_rate: float,
              rng: np.random.Generator) -> str:
    text = MARKERS[ptype] if rng.random() < marker_rate else NEUTRAL
    if rng.random() < cue_rate:
        text = f"{CUE} {text}"
    return text.capitalize() + "."


def _utterance(cfg: PlantConfig, side: dict, rng: np.random.Generator) -> Utterance:
    n = int(rng.integers(cfg.sentences[0], cfg.sentences[1] + 1))
    types = [TYPES[k] for k in rng.choice(len(TYPES), size=n, p=side["types"])]
    edges: dict[tuple[int, int], None] = {}  # insertion-ordered set
    for i in range(n - 1):
        pair = (types[i], types[i + 1])
        if pair == (P.FACT, P.VALUE) and rng.random() < side["fact_value"]:
            edges[(i, i + 1)] = None
        elif pair == (P.VALUE, P.FACT) and rng.random() < side["fact_value"]:
            edges[(i + 1, i)] = None
        elif rng.random() < cfg.base_link:
            edges[(i + 1, i)] = None
    if n >= 3 and rng.random() < side["divergent"]:
        m = int(rng.integers(1, n - 1))
        for a, b in ((m - 1, m), (m + 1, m)):
            edges.pop((a, b), None)  # no 2-cycles with the planted pair
        edges[(m, m - 1)] = None
        edges[(m, m + 1)] = None
    return Utterance(
        sentences=[_sentence(t, cfg.marker_rate, side["cue"], rng) for t in types],
        prop_types=types,
        edges=[SupportEdge(a, b) for a, b in edges],
    )


def generate_debate(cfg: PlantConfig, index: int) -> Debate:
    rng = np.random.default_rng([cfg.seed, index])
    winner = int(rng.integers(2))  # 0 = PRO
    sides = [cfg.side_params(winner == s) for s in (0, 1)]
    n_rounds = int(rng.integers(cfg.rounds[0], cfg.rounds[1] + 1))
    rounds = [Round(pro=_utterance(cfg, sides[0], rng), con=_utterance(cfg, sides[1], rng))
              for _ in range(n_rounds)]
    loser_votes = int(rng.integers(0, 6))
    winner_votes = loser_votes + int(rng.integers(2, 7))
    votes = (winner_votes, loser_votes) if winner == 0 else (loser_votes, winner_votes)
    return Debate(
        id=f"synth-{cfg.seed}-{index:05d}",
        topic=f"synthetic topic {index % 23}",
        rounds=rounds,
        votes_pro=votes[0],
        votes_con=votes[1],
    )


def generate_corpus(cfg: PlantConfig = PlantConfig()) -> list[Debate]:
    return [generate_debate(cfg, i) for i in range(cfg.n_debates)]


def manifest(cfg: PlantConfig) -> dict:
    from .io import provenance

    return {"plant": cfg.to_json(), **provenance(cfg.seed, cfg.to_json())}
