"""Dual-stream persuasion predictor, its training loop, and logistic-regression baselines."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from . import __version__
from .argfeatures import DEFAULT_VOCAB, Vocabulary, assemble_features, side_mean_features
from .corpus import CON, DEFAULT_EMBED_DIM, PRO, Debate, utterance_embedding
from .neural import (
    AdagradState,
    DenseParams,
    LstmParams,
    ParamSet,
    adagrad_step,
    bilstm_backward,
    bilstm_forward,
    cross_entropy,
    dense_backward,
    dense_forward,
    init_dense,
    init_lstm,
    softmax_backward,
    PROB_FLOOR,
)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.005
    weight_decay: float = 0.01
    dropout: float = 0.5
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    use_text: bool = True
    use_prop_ngrams: bool = True
    use_link_ngrams: bool = True
    use_graph: bool = True
    text_hidden: int = 32
    arg_hidden: int = 4
    embed_dim: int = DEFAULT_EMBED_DIM

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if not (self.use_text or self.use_arg):
            raise ValueError("at least one stream (text or an argument-feature group) must be enabled")

    @property
    def use_arg(self) -> bool:
        return self.use_prop_ngrams or self.use_link_ngrams or self.use_graph

    @classmethod
    def small_corpus(cls, **overrides) -> "TrainConfig":
        """Optimizer setting for corpora of a few hundred debates.

        The defaults are tuned for ~2k training debates. With ~400 debates per
        epoch, Adagrad at lr 0.005 with L2 0.01 stays on its initial plateau for
        the whole 50-epoch budget: the decay term outweighs the small early data
        gradients. Dropping weight decay and raising the rate lets it converge
        in a handful of epochs.
        """
        return cls(**{"lr": 0.05, "weight_decay": 0.0, **overrides})


def feature_mask(vocab: Vocabulary, config: TrainConfig) -> np.ndarray:
    mask = np.ones(vocab.dim)
    groups = vocab.groups()
    for flag, group in (
        (config.use_prop_ngrams, "prop_ngrams"),
        (config.use_link_ngrams, "link_ngrams"),
        (config.use_graph, "graph"),
    ):
        if not flag:
            mask[groups[group]] = 0.0
    return mask


@dataclass
class DebateSequences:
    id: str
    text: np.ndarray  # T x embed_dim
    arg: np.ndarray  # T x feature dim


def debate_to_sequences(d: Debate, vocab: Vocabulary = DEFAULT_VOCAB,
                        config: Optional[TrainConfig] = None) -> DebateSequences:
    """Per-utterance inputs in the order pro1, con1, pro2, con2, ..."""
    config = config or TrainConfig()
    utts = d.utterances()
    text = np.array([utterance_embedding(u, config.embed_dim) for u in utts])
    arg = np.array([assemble_features(u, vocab) for u in utts]) * feature_mask(vocab, config)
    return DebateSequences(d.id, text, arg)


class DualStreamModel:
    """Two bidirectional LSTMs (text embeddings, argument features), one softmax
    head each, and a learned convex weight ``alpha`` mixing the two class
    distributions. A disabled stream is skipped entirely.
    """

    def __init__(self, text_dim: int = DEFAULT_EMBED_DIM, arg_dim: int = 32,
                 text_hidden: int = 32, arg_hidden: int = 4, dropout: float = 0.5,
                 use_text: bool = True, use_arg: bool = True, seed: int = 0,
                 params: Optional[np.ndarray] = None):
        if not (use_text or use_arg):
            raise ValueError("at least one stream must be enabled")
        self.dims = dict(text_dim=text_dim, arg_dim=arg_dim, text_hidden=text_hidden, arg_hidden=arg_hidden)
        self.dropout = dropout
        self.use_text, self.use_arg = use_text, use_arg
        self.seed = seed
        # each stream's parameters are contiguous so a disabled stream can be skipped
        shapes = {}
        for stream, dim, hidden in (("text", text_dim, text_hidden), ("arg", arg_dim, arg_hidden)):
            shapes.update(LstmParams.shapes(f"{stream}_fwd", dim, hidden))
            shapes.update(LstmParams.shapes(f"{stream}_bwd", dim, hidden))
            shapes.update(DenseParams.shapes(f"{stream}_head", 2 * hidden, 2))
        shapes["combine_logit"] = (1,)
        self.ps = ParamSet(shapes, None if params is None else np.array(params, dtype=float))
        if params is None:
            rng = np.random.default_rng(seed)
            for name in ("text_fwd", "text_bwd", "arg_fwd", "arg_bwd"):
                init_lstm(LstmParams.view(self.ps, name), rng)
            for name in ("text_head", "arg_head"):
                init_dense(DenseParams.view(self.ps, name), rng)

    @classmethod
    def from_config(cls, config: TrainConfig, vocab: Vocabulary = DEFAULT_VOCAB) -> "DualStreamModel":
        return cls(text_dim=config.embed_dim, arg_dim=vocab.dim, text_hidden=config.text_hidden,
                   arg_hidden=config.arg_hidden, dropout=config.dropout, use_text=config.use_text,
                   use_arg=config.use_arg, seed=config.seed)

    @property
    def params(self) -> np.ndarray:
        return self.ps.data

    def live_slice(self) -> slice:
        """Span of the flat parameter vector that can influence the output."""
        sl = self.ps.slices
        if not self.use_arg:
            return slice(sl["text_fwd.W"].start, sl["text_head.b"].stop)
        if not self.use_text:
            return slice(sl["arg_fwd.W"].start, sl["arg_head.b"].stop)
        return slice(0, self.ps.size)

    def grad_spans(self, seqs: DebateSequences) -> tuple[np.ndarray, np.ndarray]:
        """Flat [start, stop) ranges outside which this instance's gradient is zero.

        Rows of a text input matrix only receive gradient through input columns
        that are non-zero somewhere in the sequence; everything else in the
        live span is included whole.
        """
        live = self.live_slice()
        if not self.use_text:
            return np.array([live.start]), np.array([live.stop])
        sl, width = self.ps.slices, 4 * self.dims["text_hidden"]
        cols = np.flatnonzero(np.asarray(seqs.text).any(axis=0)) * width
        starts, stops = [], []
        for direction, rest_stop in (("fwd", sl["text_bwd.W"].start), ("bwd", live.stop)):
            W = sl[f"text_{direction}.W"]
            starts += [W.start + cols, [W.stop]]
            stops += [W.start + cols + width, [rest_stop]]
        return np.concatenate(starts), np.concatenate(stops)

    @property
    def n_params(self) -> int:
        return self.ps.size

    @property
    def alpha(self) -> float:
        """Weight on the text stream."""
        if not self.use_arg:
            return 1.0
        if not self.use_text:
            return 0.0
        return float(expit(self.ps["combine_logit"][0]))

    def _views(self, ps: ParamSet) -> dict:
        views = {f"{s}_{d}": LstmParams.view(ps, f"{s}_{d}") for s in ("text", "arg") for d in ("fwd", "bwd")}
        views.update({f"{s}_head": DenseParams.view(ps, f"{s}_head") for s in ("text", "arg")})
        return views

    @property
    def _p(self) -> dict:
        # params are only ever updated in place, so the views stay valid
        if getattr(self, "_pviews", None) is None or self._pviews[0] is not self.ps.data:
            self._pviews = (self.ps.data, self._views(self.ps))
        return self._pviews[1]

    def _stream_forward(self, stream: str, seq, training, rng):
        p = self._p
        enc, enc_cache = bilstm_forward(seq, p[f"{stream}_fwd"], p[f"{stream}_bwd"])
        probs, head_cache = dense_forward(enc, p[f"{stream}_head"], self.dropout, training, rng)
        return probs, (enc_cache, head_cache)

    def _forward(self, seqs: DebateSequences, training: bool, rng):
        caches = {}
        p_text = p_arg = None
        if self.use_text:
            p_text, caches["text"] = self._stream_forward("text", seqs.text, training, rng)
        if self.use_arg:
            p_arg, caches["arg"] = self._stream_forward("arg", seqs.arg, training, rng)
        a = self.alpha
        if p_text is None:
            probs = p_arg
        elif p_arg is None:
            probs = p_text
        else:
            probs = a * p_text + (1.0 - a) * p_arg
        return probs, (p_text, p_arg, a, caches)

    def forward(self, seqs: DebateSequences, training: bool = False, rng=None) -> np.ndarray:
        """Class distribution over (PRO, CON)."""
        return self._forward(seqs, training, rng)[0]

    def loss(self, seqs: DebateSequences, label: int, training: bool = False, rng=None) -> float:
        return cross_entropy(self.forward(seqs, training, rng), label)

    def loss_and_grad(self, seqs: DebateSequences, label: int, training: bool = False, rng=None,
                      out: Optional["GradBuffer"] = None, zeroed: bool = False):
        """Loss and its exact gradient as a flat vector aligned with ``params``.

        Passing a :class:`GradBuffer` reuses its storage (it is overwritten);
        ``zeroed=True`` promises the buffer is already all zeros.
        """
        probs, (p_text, p_arg, a, caches) = self._forward(seqs, training, rng)
        loss = cross_entropy(probs, label)
        if out is None:
            out = GradBuffer(self)
        elif not zeroed:
            out.data.fill(0.0)
        grad, gv, p = out.ps, out.views, self._p
        py = probs[label]
        if py <= PROB_FLOOR:
            return loss, grad.data
        d_probs = np.zeros(2)
        d_probs[label] = -1.0 / py
        for stream, p_s, weight in (("text", p_text, a), ("arg", p_arg, 1.0 - a)):
            if p_s is None:
                continue
            d_logits = softmax_backward(p_s, weight * d_probs)
            enc_cache, head_cache = caches[stream]
            d_enc = dense_backward(d_logits, head_cache, p[f"{stream}_head"], gv[f"{stream}_head"])
            bilstm_backward(d_enc, enc_cache, p[f"{stream}_fwd"], p[f"{stream}_bwd"],
                            gv[f"{stream}_fwd"], gv[f"{stream}_bwd"])
        if p_text is not None and p_arg is not None:
            grad["combine_logit"][0] = (d_probs @ (p_text - p_arg)) * a * (1.0 - a)
        return loss, grad.data

    def backward(self, seqs: DebateSequences, label: int, training: bool = False, rng=None) -> np.ndarray:
        return self.loss_and_grad(seqs, label, training, rng)[1]

    def predict(self, seqs: DebateSequences) -> int:
        return int(np.argmax(self.forward(seqs)))

    def copy(self) -> "DualStreamModel":
        return DualStreamModel(**self.dims, dropout=self.dropout, use_text=self.use_text,
                               use_arg=self.use_arg, seed=self.seed, params=self.params)

    def to_checkpoint(self, vocab: Vocabulary, config: Optional[TrainConfig] = None) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "tool_version": __version__,
            "seed": self.seed,
            "dims": self.dims,
            "dropout": self.dropout,
            "use_text": self.use_text,
            "use_arg": self.use_arg,
            "shapes": {k: list(v) for k, v in self.ps.shapes.items()},
            "params": self.params.tolist(),
            "vocabulary": vocab.to_json(),
            "config": None if config is None else asdict(config),
        }

    @classmethod
    def from_checkpoint(cls, obj: dict) -> tuple["DualStreamModel", Vocabulary]:
        if obj.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {obj.get('version')!r}")
        model = cls(**obj["dims"], dropout=obj["dropout"], use_text=obj["use_text"],
                    use_arg=obj["use_arg"], seed=obj["seed"], params=np.asarray(obj["params"]))
        saved = {k: tuple(v) for k, v in obj["shapes"].items()}
        if saved != model.ps.shapes:
            raise ValueError("checkpoint shapes do not match the model layout")
        return model, Vocabulary.from_json(obj["vocabulary"])


class GradBuffer:
    """Reusable gradient storage laid out like a model's parameters."""

    def __init__(self, model: DualStreamModel):
        self.ps = model.ps.zeros_like()
        self.views = model._views(self.ps)

    @property
    def data(self) -> np.ndarray:
        return self.ps.data


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    alpha: float


@dataclass
class TrainResult:
    model: DualStreamModel
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None

    def history_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.history)


def _labeled(debates: Sequence[Debate], vocab, config) -> list[tuple[DebateSequences, int]]:
    out = []
    for d in debates:
        y = d.label()
        if y is None:
            raise ValueError(f"debate {d.id!r} has no winner label")
        out.append((debate_to_sequences(d, vocab, config), y))
    return out


def evaluate_model(model: DualStreamModel, data) -> tuple[float, float]:
    """Mean loss and accuracy on prepared (sequences, label) pairs."""
    if not data:
        return float("nan"), float("nan")
    losses, correct = 0.0, 0
    for seqs, y in data:
        probs = model.forward(seqs)
        losses += cross_entropy(probs, y)
        correct += int(np.argmax(probs) == y)
    return losses / len(data), correct / len(data)


def train(train_set: Sequence[Debate], val_set: Sequence[Debate], config: TrainConfig = TrainConfig(),
          vocab: Vocabulary = DEFAULT_VOCAB, prepared=None) -> TrainResult:
    """Per-debate Adagrad training with early stopping on validation loss.

    Returns the parameters of the epoch with the lowest validation loss.
    ``prepared`` optionally maps debate id to precomputed sequences.
    """
    if not train_set or not val_set:
        raise ValueError("training and validation sets must be non-empty")
    model = DualStreamModel.from_config(config, vocab)
    result = TrainResult(model)
    if config.max_epochs <= 0:
        return result

    def prep(debates):
        if prepared is None:
            return _labeled(debates, vocab, config)
        return [(prepared[d.id], d.label()) for d in debates]

    train_data, val_data = prep(train_set), prep(val_set)
    # shuffling and dropout draw from a stream distinct from every initialisation stream
    rng = np.random.default_rng([config.seed, 1])
    state = AdagradState.fresh(model.params)
    buf = GradBuffer(model)
    # parameters of a disabled stream never receive gradient; leave them untouched
    live = model.live_slice()
    live_params, live_grad = model.params[live], buf.data[live]
    live_state = AdagradState(state.accum[live], state.eps)
    # without weight decay, zero-gradient entries stay put, so only the spans
    # that can carry gradient need the update
    spans = [model.grad_spans(seqs) for seqs, _ in train_data] if config.weight_decay == 0 else None
    best_loss, best_params, stale = np.inf, model.params.copy(), 0
    for epoch in range(1, config.max_epochs + 1):
        total = 0.0
        for k in rng.permutation(len(train_data)):
            seqs, y = train_data[k]
            # the buffer is zeroed by the consuming Adagrad pass below
            loss, grad = model.loss_and_grad(seqs, y, training=True, rng=rng, out=buf, zeroed=True)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch} on debate {seqs.id!r}")
            if spans is None:
                adagrad_step(live_params, live_grad, live_state, config.lr, config.weight_decay, consume=True)
            else:
                adagrad_step(model.params, buf.data, state, config.lr, 0.0, consume=True, spans=spans[k])
            total += loss
        val_loss, val_acc = evaluate_model(model, val_data)
        result.history.append(EpochRecord(epoch, total / len(train_data), val_loss, val_acc, model.alpha))
        logger.debug("epoch %d train %.4f val %.4f acc %.3f", epoch, total / len(train_data), val_loss, val_acc)
        if val_loss < best_loss:
            best_loss, best_params, stale = val_loss, model.params.copy(), 0
            result.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.params[:] = best_params
    return result


# ---------------------------------------------------------------------------
# logistic-regression baselines


@dataclass
class LrModel:
    weights: np.ndarray
    bias: float
    l2: float

    def predict_proba(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        if X.shape[1] != self.weights.shape[0]:
            raise ValueError(f"expected {self.weights.shape[0]} features, got {X.shape[1]}")
        return expit(X @ self.weights + self.bias)


def lr_train(features, labels, l2: float = 1e-3, lr: float = 0.5, epochs: int = 2000) -> LrModel:
    """Full-batch gradient descent on the L2-regularised logistic loss."""
    X = np.asarray(features, float)
    y = np.asarray(labels, float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("features must be a 2-d array with one row per label")
    n, dim = X.shape
    w, b = np.zeros(dim), 0.0
    for _ in range(epochs):
        err = expit(X @ w + b) - y
        w -= lr * (X.T @ err / n + l2 * w)
        b -= lr * err.mean()
    return LrModel(w, b, l2)


def lr_predict(m: LrModel, x) -> float:
    """Probability of class 1 (CON winning) for one feature vector."""
    x = np.asarray(x, float)
    if x.shape != m.weights.shape:
        raise ValueError(f"expected {m.weights.shape[0]} features, got {x.shape}")
    return float(expit(x @ m.weights + m.bias))


def lr_debate_features(d: Debate, vocab: Vocabulary = DEFAULT_VOCAB, external=None,
                       use_arg: bool = True) -> np.ndarray:
    """PRO-side mean features, CON-side mean features, then optional sidecar vectors."""
    parts = []
    if use_arg:
        parts += [side_mean_features(d, PRO, vocab), side_mean_features(d, CON, vocab)]
    if external is not None:
        ext = external[d.id]
        parts += [ext.pro_features, ext.con_features, ext.shared_features]
    if not parts:
        raise ValueError("no features selected")
    return np.concatenate([np.asarray(p, float) for p in parts])
