"""Cross-validation, significance tests, annotation agreement and the winner/loser feature contrast."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.special import betainc
from scipy.stats import rankdata

from .argfeatures import DEFAULT_VOCAB, Vocabulary, assemble_features, build_vocabulary, side_mean_features
from .corpus import CON, PRO, Debate, utterance_embedding
from .model import (
    DebateSequences,
    TrainConfig,
    evaluate_model,
    feature_mask,
    lr_debate_features,
    lr_predict,
    lr_train,
    train,
)

EXACT_MAX_N = 20


# ---------------------------------------------------------------------------
# significance tests


@dataclass(frozen=True)
class TestResult:
    test: str
    statistic: float
    p_value: float
    n: int
    method: str = ""


def _exact_signed_rank_counts(doubled_ranks: Sequence[int]) -> np.ndarray:
    """counts[s] = number of sign patterns whose doubled positive-rank sum is s."""
    counts = np.zeros(int(sum(doubled_ranks)) + 1)
    counts[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:len(counts) - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(x, y, alternative: str = "two-sided", exact_max_n: int = EXACT_MAX_N) -> TestResult:
    """Paired Wilcoxon signed-rank test.

    Zero differences are dropped and tied |d| share average ranks. The
    statistic is W = min(T+, T-). For up to ``exact_max_n`` non-zero pairs
    the p-value is exact over all 2^n sign assignments; beyond that a normal
    approximation with tie-corrected variance and continuity correction is used.
    ``alternative`` is "two-sided", "greater" (x tends to exceed y) or "less".
    """
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be paired 1-d samples of equal length")
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    d = x - y
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise ValueError("all differences are zero; the signed-rank test is undefined")
    if n < 5:
        raise ValueError(f"need at least 5 non-zero differences, got {n}")
    ranks = rankdata(np.abs(d))
    t_plus = float(ranks[d > 0].sum())
    total = n * (n + 1) / 2
    w = min(t_plus, total - t_plus)

    if n <= exact_max_n:
        doubled = np.rint(2 * ranks).astype(int)  # average ranks are multiples of 1/2
        counts = _exact_signed_rank_counts(doubled)
        sums = np.arange(len(counts))
        s_obs, s_tot = int(round(2 * t_plus)), int(doubled.sum())
        if alternative == "two-sided":
            w2 = min(s_obs, s_tot - s_obs)
            hit = np.minimum(sums, s_tot - sums) <= w2
        elif alternative == "greater":
            hit = sums >= s_obs
        else:
            hit = sums <= s_obs
        p = counts[hit].sum() / 2.0 ** n
        method = "exact"
    else:
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        mean = n * (n + 1) / 4
        var = n * (n + 1) * (2 * n + 1) / 24 - (tie_counts ** 3 - tie_counts).sum() / 48
        sd = math.sqrt(var)
        if alternative == "two-sided":
            z = (abs(t_plus - mean) - 0.5) / sd
            p = 1.0 if z <= 0 else math.erfc(z / math.sqrt(2))
        elif alternative == "greater":
            p = 0.5 * math.erfc(((t_plus - mean) - 0.5) / sd / math.sqrt(2))
        else:
            p = 0.5 * math.erfc((-(t_plus - mean) - 0.5) / sd / math.sqrt(2))
        method = "normal approximation, tie-corrected, continuity-corrected"
    return TestResult("wilcoxon signed-rank", w, min(float(p), 1.0), n, f"{method}, {alternative}")


def student_t_two_sided_p(t: float, df: int) -> float:
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def paired_t_test(x, y) -> TestResult:
    d = np.asarray(x, float) - np.asarray(y, float)
    n = len(d)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    sd = d.std(ddof=1)
    if sd == 0:
        raise ValueError("differences have zero variance")
    t = d.mean() * math.sqrt(n) / sd
    return TestResult("paired t-test", float(t), student_t_two_sided_p(t, n - 1), n, "two-sided")


# ---------------------------------------------------------------------------
# annotation agreement


@dataclass
class AnnotationSet:
    items: list[tuple[str, tuple[str, ...]]]
    categories: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        self.items = [(str(i), tuple(labels)) for i, labels in self.items]
        if self.categories is not None:
            allowed = set(self.categories)
            for item_id, labels in self.items:
                bad = set(labels) - allowed
                if bad:
                    raise ValueError(f"item {item_id!r} uses undeclared categories {sorted(bad)}")

    def ids(self) -> list[str]:
        return [i for i, _ in self.items]


def coincidence_matrix(a: AnnotationSet) -> tuple[list, np.ndarray]:
    """Nominal coincidence matrix over pairable values (items with at least two labels)."""
    cats = sorted({lab for _, labels in a.items if len(labels) >= 2 for lab in labels})
    index = {c: k for k, c in enumerate(cats)}
    o = np.zeros((len(cats), len(cats)))
    for _, labels in a.items:
        m = len(labels)
        if m < 2:
            continue
        counts = Counter(labels)
        for c, nc in counts.items():
            for k, nk in counts.items():
                pairs = nc * (nk - 1) if c == k else nc * nk
                o[index[c], index[k]] += pairs / (m - 1)
    return cats, o


def krippendorff_alpha(a: AnnotationSet) -> float:
    """Krippendorff's alpha for nominal data."""
    _, o = coincidence_matrix(a)
    n = o.sum()
    if n == 0:
        raise ValueError("no pairable values: every item needs at least two labels")
    n_c = o.sum(axis=1)
    observed = (n - np.trace(o)) / n
    expected = (n * n - (n_c ** 2).sum()) / (n * (n - 1))
    if observed == 0:
        return 1.0
    if expected == 0:
        raise ValueError("expected disagreement is zero")
    return float(1.0 - observed / expected)


@dataclass
class ConsistencyReport:
    overall: float
    n_items: int
    per_category: dict[str, dict]


def annotation_consistency(system_labels: Mapping[str, str], annotations: AnnotationSet) -> ConsistencyReport:
    """Fraction of items whose system label matches at least one annotator,
    overall and broken down by system label."""
    ids = annotations.ids()
    if set(ids) != set(system_labels):
        missing = set(ids) ^ set(system_labels)
        raise ValueError(f"item ids differ between system labels and annotations: {sorted(missing)[:5]}")
    hits, per = 0, defaultdict(lambda: [0, 0])
    for item_id, labels in annotations.items:
        label = system_labels[item_id]
        ok = label in labels
        hits += ok
        per[label][0] += 1
        per[label][1] += ok
    return ConsistencyReport(
        overall=hits / len(ids) if ids else float("nan"),
        n_items=len(ids),
        per_category={c: {"n": n, "consistency": k / n} for c, (n, k) in sorted(per.items())},
    )


def read_annotations(path) -> tuple[AnnotationSet, dict[str, str]]:
    """JSONL with {"id", "labels": [...], "system": optional label} per line."""
    items, system = [], {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        items.append((str(obj["id"]), tuple(obj["labels"])))
        if obj.get("system") is not None:
            system[str(obj["id"])] = obj["system"]
    return AnnotationSet(items), system


# ---------------------------------------------------------------------------
# feature contrast


@dataclass
class ContrastRow:
    feature: str
    winner_mean: float
    loser_mean: float
    direction: str  # "winner", "loser" or "equal"
    p_value: Optional[float]
    statistic: Optional[float]
    n: int
    status: str = "ok"


def contrast_from_pairs(names: Sequence[str], winner: np.ndarray, loser: np.ndarray,
                        alternative: str = "two-sided") -> list[ContrastRow]:
    rows = []
    for k, name in enumerate(names):
        w, l = winner[:, k], loser[:, k]
        wm, lm = float(w.mean()), float(l.mean())
        direction = "winner" if wm > lm else "loser" if wm < lm else "equal"
        nonzero = int((w != l).sum())
        if nonzero == 0:
            rows.append(ContrastRow(name, wm, lm, direction, None, None, 0, "all differences zero"))
        elif nonzero < 5:
            rows.append(ContrastRow(name, wm, lm, direction, None, None, nonzero, "insufficient data"))
        else:
            res = wilcoxon_signed_rank(w, l, alternative)
            rows.append(ContrastRow(name, wm, lm, direction, res.p_value, res.statistic, res.n))
    return sorted(rows, key=lambda r: (r.p_value is None, r.p_value if r.p_value is not None else 0.0, r.feature))


def feature_contrast(corpus: Sequence[Debate], vocab: Vocabulary = DEFAULT_VOCAB,
                     alternative: str = "two-sided") -> list[ContrastRow]:
    """Per feature slot, compare winner-side vs loser-side mean values across debates (paired)."""
    winners, losers = [], []
    for d in corpus:
        y = d.label()
        if y is None:
            continue
        winners.append(side_mean_features(d, y, vocab))
        losers.append(side_mean_features(d, 1 - y, vocab))
    if not winners:
        raise ValueError("no labelled debates")
    return contrast_from_pairs(vocab.slot_names(), np.array(winners), np.array(losers), alternative)


def contrast_table(rows: Iterable[ContrastRow]) -> str:
    lines = [f"{'feature':<32} {'winner':>8} {'loser':>8} {'more in':>8} {'p':>10}  status"]
    for r in rows:
        p = "" if r.p_value is None else f"{r.p_value:.3g}"
        lines.append(f"{r.feature:<32} {r.winner_mean:8.4f} {r.loser_mean:8.4f} {r.direction:>8} {p:>10}  {r.status}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# cross-validation


class SequenceCache:
    """Per-debate text embeddings and unmasked argument features, computed once
    and masked per configuration."""

    def __init__(self, embed_dim: int = 768):
        self.embed_dim = embed_dim
        self._text: dict[str, np.ndarray] = {}
        self._arg: dict[tuple[str, Vocabulary], np.ndarray] = {}

    def get(self, d: Debate, vocab: Vocabulary, config: TrainConfig) -> DebateSequences:
        if config.embed_dim != self.embed_dim:
            raise ValueError("cache built for a different embedding dimension")
        utts = d.utterances()
        if d.id not in self._text:
            self._text[d.id] = np.array([utterance_embedding(u, self.embed_dim) for u in utts])
        key = (d.id, vocab)
        if key not in self._arg:
            self._arg[key] = np.array([assemble_features(u, vocab) for u in utts])
        return DebateSequences(d.id, self._text[d.id], self._arg[key] * feature_mask(vocab, config))

    def prepared(self, debates: Sequence[Debate], vocab: Vocabulary, config: TrainConfig) -> dict:
        return {d.id: self.get(d, vocab, config) for d in debates}


def fold_assignment(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Seed-shuffled partition of range(n) into k near-equal folds."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise ValueError(f"corpus of {n} debates cannot be split into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def majority_rate(corpus: Sequence[Debate]) -> float:
    labels = [d.label() for d in corpus]
    return max(Counter(labels).values()) / len(labels)


def uses_fallback_embedder(corpus: Sequence[Debate]) -> bool:
    return any(u.embedding is None for d in corpus for u in d.utterances())


@dataclass
class EvalReport:
    k: int
    seed: int
    n_debates: int
    fold_accuracies: list[float]
    mean_accuracy: float
    std_accuracy: float
    majority_baseline: float
    config: dict
    fold_epochs: list[int] = field(default_factory=list)
    ablations: dict[str, dict] = field(default_factory=dict)
    significance: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        lines = [
            f"{self.k}-fold CV over {self.n_debates} debates (seed {self.seed})",
            f"  majority baseline   {self.majority_baseline:.4f}",
            f"  mean accuracy       {self.mean_accuracy:.4f} +/- {self.std_accuracy:.4f}",
            "  per fold            " + " ".join(f"{a:.4f}" for a in self.fold_accuracies),
        ]
        for name, res in self.ablations.items():
            lines.append(f"  {name:<20}{res['mean_accuracy']:.4f}")
        for sig in self.significance:
            lines.append(f"  {sig['test']} ({sig.get('label', '')}): statistic {sig['statistic']:.4f}, p {sig['p_value']:.4g}")
        lines += [f"  note: {n}" for n in self.notes]
        return "\n".join(lines)

    def folds_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", "accuracy", "epochs"])
        for i, acc in enumerate(self.fold_accuracies):
            w.writerow([i, repr(acc), self.fold_epochs[i] if i < len(self.fold_epochs) else ""])
        return buf.getvalue()


def _split_validation(train_idx: np.ndarray, seed: int, frac: float = 0.1):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(train_idx)
    n_val = max(1, int(round(frac * len(perm))))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def kfold_evaluate(corpus: Sequence[Debate], k: int = 5, config: TrainConfig = TrainConfig(),
                   vocab: Optional[Vocabulary] = None, build_vocab: bool = False,
                   cache: Optional[SequenceCache] = None, trainer=None) -> EvalReport:
    """k-fold CV of the dual-stream model.

    Each fold trains on the remaining debates, holding out 10% of them for
    early stopping. With ``build_vocab`` the n-gram vocabulary is rebuilt from
    each fold's training portion. ``trainer`` replaces :func:`model.train`
    (same signature) for testing the harness.
    """
    corpus = list(corpus)
    folds = fold_assignment(len(corpus), k, config.seed)
    cache = cache or SequenceCache(config.embed_dim)
    trainer = trainer or train
    accs, epochs = [], []
    for i, test_idx in enumerate(folds):
        # distinct for every (seed, fold) pair, so runs under different seeds never share a stream
        fold_cfg = replace(config, seed=config.seed * k + i)
        rest = np.setdiff1d(np.arange(len(corpus)), test_idx)
        tr_idx, val_idx = _split_validation(rest, fold_cfg.seed)
        tr = [corpus[j] for j in tr_idx]
        val = [corpus[j] for j in val_idx]
        test = [corpus[j] for j in test_idx]
        fold_vocab = build_vocabulary(tr) if build_vocab else (vocab or DEFAULT_VOCAB)
        prepared = cache.prepared(tr + val + test, fold_vocab, fold_cfg)
        result = trainer(tr, val, fold_cfg, fold_vocab, prepared=prepared)
        _, acc = evaluate_model(result.model, [(prepared[d.id], d.label()) for d in test])
        accs.append(float(acc))
        epochs.append(len(result.history))
    notes = []
    if uses_fallback_embedder(corpus):
        notes.append("text stream uses the hashing fallback embedder, not BERT")
    if build_vocab:
        notes.append("vocabulary rebuilt per training fold (3% document-frequency threshold)")
    return EvalReport(
        k=k,
        seed=config.seed,
        n_debates=len(corpus),
        fold_accuracies=accs,
        mean_accuracy=float(np.mean(accs)),
        std_accuracy=float(np.std(accs, ddof=1)) if k > 1 else 0.0,
        majority_baseline=majority_rate(corpus),
        config=asdict(config),
        fold_epochs=epochs,
        notes=notes,
    )


ABLATIONS: dict[str, dict] = {
    "full": {},
    "no_text": {"use_text": False},
    "no_arg_struct": {"use_prop_ngrams": False, "use_link_ngrams": False, "use_graph": False},
    "no_prop_ngrams": {"use_prop_ngrams": False},
    "no_link_ngrams": {"use_link_ngrams": False},
    "no_graph": {"use_graph": False},
}


@dataclass
class SweepResult:
    seeds: list[int]
    per_seed: dict[str, list[float]]  # variant -> mean CV accuracy per seed
    reports: dict[str, list[EvalReport]]

    def mean(self, variant: str) -> float:
        return float(np.mean(self.per_seed[variant]))

    def summary(self) -> dict[str, dict]:
        return {v: {"mean_accuracy": self.mean(v), "per_seed": accs} for v, accs in self.per_seed.items()}


def ablation_sweep(corpus: Sequence[Debate], seeds: Sequence[int], k: int = 5,
                   config: TrainConfig = TrainConfig(), variants: Optional[Sequence[str]] = None,
                   vocab: Optional[Vocabulary] = None, build_vocab: bool = False) -> SweepResult:
    """Cross-validate every ablation variant under each seed."""
    variants = list(variants or ABLATIONS)
    cache = SequenceCache(config.embed_dim)
    per_seed: dict[str, list[float]] = {v: [] for v in variants}
    reports: dict[str, list[EvalReport]] = {v: [] for v in variants}
    for seed in seeds:
        for v in variants:
            cfg = replace(config, seed=seed, **ABLATIONS[v])
            rep = kfold_evaluate(corpus, k, cfg, vocab=vocab, build_vocab=build_vocab, cache=cache)
            per_seed[v].append(rep.mean_accuracy)
            reports[v].append(rep)
    return SweepResult(list(seeds), per_seed, reports)


def kfold_lr(corpus: Sequence[Debate], k: int = 5, seed: int = 0, external=None, use_arg: bool = True,
             vocab: Vocabulary = DEFAULT_VOCAB, l2: float = 1e-3, lr: float = 0.5, epochs: int = 2000) -> list[float]:
    """Per-fold test accuracy of the logistic-regression baseline on the same fold split."""
    corpus = list(corpus)
    X = np.array([lr_debate_features(d, vocab, external, use_arg) for d in corpus])
    y = np.array([d.label() for d in corpus])
    accs = []
    for test_idx in fold_assignment(len(corpus), k, seed):
        tr = np.setdiff1d(np.arange(len(corpus)), test_idx)
        m = lr_train(X[tr], y[tr], l2=l2, lr=lr, epochs=epochs)
        pred = (m.predict_proba(X[test_idx]) >= 0.5).astype(int)
        accs.append(float((pred == y[test_idx]).mean()))
    return accs
