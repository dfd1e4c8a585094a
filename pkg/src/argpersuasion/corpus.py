"""Debate data model, JSONL ingestion, preprocessing filters and the fallback embedder."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_EMBED_DIM = 768

PRO, CON = 0, 1
SIDES = ("pro", "con")


class PropositionType(enum.Enum):
    POLICY = "policy"
    VALUE = "value"
    FACT = "fact"
    TESTIMONY = "testimony"
    REFERENCE = "reference"

    def __str__(self) -> str:
        return self.value

    def __lt__(self, other: "PropositionType") -> bool:
        return self.value < other.value


@dataclass(frozen=True)
class SupportEdge:
    """Directed support link: sentence ``src`` supports sentence ``dst``."""

    src: int
    dst: int


@dataclass(frozen=True)
class Utterance:
    sentences: tuple[str, ...] = ()
    prop_types: tuple[PropositionType, ...] = ()
    edges: tuple[SupportEdge, ...] = ()
    embedding: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        # normalise list inputs so instances stay hashable and comparable
        object.__setattr__(self, "sentences", tuple(self.sentences))
        object.__setattr__(
            self, "prop_types", tuple(PropositionType(p) for p in self.prop_types)
        )
        object.__setattr__(
            self,
            "edges",
            tuple(e if isinstance(e, SupportEdge) else SupportEdge(*e) for e in self.edges),
        )
        if self.embedding is not None:
            object.__setattr__(self, "embedding", tuple(float(v) for v in self.embedding))
        if len(self.prop_types) != len(self.sentences):
            raise ValueError(
                f"{len(self.prop_types)} proposition types for {len(self.sentences)} sentences"
            )

    def __len__(self) -> int:
        return len(self.sentences)


@dataclass(frozen=True)
class Round:
    pro: Utterance
    con: Utterance

    def side(self, side: int) -> Utterance:
        return self.pro if side == PRO else self.con


@dataclass(frozen=True)
class Debate:
    id: str
    topic: str
    rounds: tuple[Round, ...]
    votes_pro: int
    votes_con: int
    forfeit: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "rounds", tuple(self.rounds))
        if not self.rounds:
            raise ValueError(f"debate {self.id!r} has no rounds")
        if self.votes_pro < 0 or self.votes_con < 0:
            raise ValueError(f"debate {self.id!r} has negative vote counts")
        if self.forfeit not in (None, "pro", "con"):
            raise ValueError(f"debate {self.id!r}: bad forfeit marker {self.forfeit!r}")

    @property
    def margin(self) -> int:
        return abs(self.votes_pro - self.votes_con)

    def label(self, min_margin: int = 2) -> Optional[int]:
        """Winning side (``PRO`` or ``CON``), or None if the margin is too small."""
        if self.margin < max(min_margin, 1):
            return None
        return PRO if self.votes_pro > self.votes_con else CON

    def utterances(self, side: Optional[int] = None) -> list[Utterance]:
        """Utterances in temporal order, PRO first within each round."""
        if side is None:
            return [u for r in self.rounds for u in (r.pro, r.con)]
        return [r.side(side) for r in self.rounds]


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    out_of_range: list[SupportEdge] = field(default_factory=list)
    self_loops: list[SupportEdge] = field(default_factory=list)
    duplicates: list[SupportEdge] = field(default_factory=list)
    has_cycle: bool = False

    @property
    def valid(self) -> bool:
        """Structural validity. Cycles are informational only."""
        return not (self.out_of_range or self.self_loops or self.duplicates)

    def problems(self) -> list[str]:
        out = [f"edge {e.src}->{e.dst} out of range" for e in self.out_of_range]
        out += [f"self-loop on {e.src}" for e in self.self_loops]
        out += [f"duplicate edge {e.src}->{e.dst}" for e in self.duplicates]
        return out


def _has_cycle(n: int, edges: Iterable[SupportEdge]) -> bool:
    adj: dict[int, list[int]] = {i: [] for i in range(n)}
    for e in edges:
        adj[e.src].append(e.dst)
    WHITE, GREY, BLACK = 0, 1, 2
    colour = [WHITE] * n
    for root in range(n):
        if colour[root] != WHITE:
            continue
        stack = [(root, iter(adj[root]))]
        colour[root] = GREY
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                colour[node] = BLACK
                stack.pop()
            elif colour[nxt] == GREY:
                return True
            elif colour[nxt] == WHITE:
                colour[nxt] = GREY
                stack.append((nxt, iter(adj[nxt])))
    return False


def validate_graph(u: Utterance) -> ValidationReport:
    n = len(u.sentences)
    report = ValidationReport()
    seen = set()
    in_range = []
    for e in u.edges:
        if not (0 <= e.src < n and 0 <= e.dst < n):
            report.out_of_range.append(e)
            continue
        if e.src == e.dst:
            report.self_loops.append(e)
        if (e.src, e.dst) in seen:
            report.duplicates.append(e)
        seen.add((e.src, e.dst))
        in_range.append(e)
    report.has_cycle = _has_cycle(n, in_range)
    return report


# ---------------------------------------------------------------------------
# (de)serialisation


def _utterance_from_json(obj: dict) -> Utterance:
    return Utterance(
        sentences=[str(s) for s in obj.get("sentences", [])],
        prop_types=obj.get("prop_types", []),
        edges=[SupportEdge(int(s), int(d)) for s, d in obj.get("edges", [])],
        embedding=obj.get("embedding"),
    )


def debate_from_json(obj: dict) -> Debate:
    rounds = [
        Round(pro=_utterance_from_json(r["pro"]), con=_utterance_from_json(r["con"]))
        for r in obj["rounds"]
    ]
    return Debate(
        id=str(obj["id"]),
        topic=str(obj.get("topic", "")),
        rounds=rounds,
        votes_pro=int(obj["votes_pro"]),
        votes_con=int(obj["votes_con"]),
        forfeit=obj.get("forfeit"),
    )


def _utterance_to_json(u: Utterance) -> dict:
    return {
        "sentences": list(u.sentences),
        "prop_types": [p.value for p in u.prop_types],
        "edges": [[e.src, e.dst] for e in u.edges],
        "embedding": None if u.embedding is None else list(u.embedding),
    }


def debate_to_json(d: Debate) -> dict:
    return {
        "id": d.id,
        "topic": d.topic,
        "rounds": [{"pro": _utterance_to_json(r.pro), "con": _utterance_to_json(r.con)} for r in d.rounds],
        "votes_pro": d.votes_pro,
        "votes_con": d.votes_con,
        "forfeit": d.forfeit,
    }


@dataclass
class ParseError:
    line: int
    reason: str


@dataclass
class ParsedCorpus:
    debates: list[Debate]
    errors: list[ParseError]


def parse_corpus(path, schema: int = SCHEMA_VERSION) -> ParsedCorpus:
    """Read a debate JSONL file.

    Malformed lines and debates with structurally invalid argument graphs
    are skipped; each skip is recorded in ``errors`` with its 1-based line
    number. Cycles are tolerated.
    """
    if schema != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {schema}")
    text = Path(path).read_text(encoding="utf-8")
    debates, errors = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            debate = debate_from_json(json.loads(line))
        except (ValueError, KeyError, TypeError) as exc:
            errors.append(ParseError(lineno, f"malformed record: {exc}"))
            continue
        problems = [
            f"round {i} {side}: {msg}"
            for i, r in enumerate(debate.rounds)
            for side, u in (("pro", r.pro), ("con", r.con))
            for msg in validate_graph(u).problems()
        ]
        if problems:
            errors.append(ParseError(lineno, f"debate {debate.id!r} rejected: " + "; ".join(problems)))
            continue
        debates.append(debate)
    for err in errors:
        logger.warning("%s:%d: %s", path, err.line, err.reason)
    return ParsedCorpus(debates, errors)


def dumps_corpus(debates: Iterable[Debate]) -> str:
    return "".join(json.dumps(debate_to_json(d), ensure_ascii=False) + "\n" for d in debates)


def write_corpus(debates: Iterable[Debate], path) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, dumps_corpus(debates))


# ---------------------------------------------------------------------------
# preprocessing


FILTER_RULES = ("margin", "too_long", "forfeit")


def filter_with_stats(
    debates: Sequence[Debate],
    min_margin: int = 2,
    max_sentences: int = 40,
    drop_forfeits: bool = True,
) -> tuple[list[Debate], Counter]:
    """Like :func:`filter_debates` but also count drops by the first rule violated."""
    kept, dropped = [], Counter({rule: 0 for rule in FILTER_RULES})
    for d in debates:
        if d.margin < min_margin or d.margin == 0:
            dropped["margin"] += 1
        elif any(len(u) > max_sentences for u in d.utterances()):
            dropped["too_long"] += 1
        elif drop_forfeits and d.forfeit is not None:
            dropped["forfeit"] += 1
        else:
            kept.append(d)
    return kept, dropped


def filter_debates(
    debates: Sequence[Debate],
    min_margin: int = 2,
    max_sentences: int = 40,
    drop_forfeits: bool = True,
) -> list[Debate]:
    return filter_with_stats(debates, min_margin, max_sentences, drop_forfeits)[0]


# ---------------------------------------------------------------------------
# fallback text embedding (hashing bag of words; NOT a BERT substitute)

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


@lru_cache(maxsize=1 << 16)
def _bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def fallback_embed(u: Utterance, dim: int = DEFAULT_EMBED_DIM, last_k: int = 3) -> np.ndarray:
    """Deterministic hashed bag-of-words over the last ``last_k`` sentences, L2-normalised."""
    if dim <= 0 or last_k < 1:
        raise ValueError("dim and last_k must be positive")
    vec = np.zeros(dim)
    for sentence in u.sentences[-last_k:]:
        for tok in tokenize(sentence):
            vec[_bucket(tok, dim)] += 1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def utterance_embedding(u: Utterance, dim: int = DEFAULT_EMBED_DIM) -> np.ndarray:
    if u.embedding is not None:
        if len(u.embedding) != dim:
            raise ValueError(f"stored embedding has dimension {len(u.embedding)}, expected {dim}")
        return np.asarray(u.embedding, dtype=float)
    return fallback_embed(u, dim)


# ---------------------------------------------------------------------------
# external feature sidecar (opaque linguistic / user features for the LR baseline)


@dataclass(frozen=True)
class ExternalFeatures:
    id: str
    pro_features: tuple[float, ...]
    con_features: tuple[float, ...]
    shared_features: tuple[float, ...] = ()


def parse_sidecar(path) -> dict[str, ExternalFeatures]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        obj = json.loads(line)
        feats = ExternalFeatures(
            id=str(obj["id"]),
            pro_features=tuple(map(float, obj.get("pro_features", []))),
            con_features=tuple(map(float, obj.get("con_features", []))),
            shared_features=tuple(map(float, obj.get("shared_features", []))),
        )
        if feats.id in out:
            raise ValueError(f"{path}:{lineno}: duplicate id {feats.id!r}")
        out[feats.id] = feats
    return out
