"""From-scratch network pieces: LSTM, bidirectional encoder, dense+softmax head,
cross-entropy, Adagrad with L2 weight decay and a finite-difference gradient checker.

All parameters of a model live in one flat float64 vector (:class:`ParamSet`);
the per-layer containers below are views into it, so an optimiser step or a
checkpoint touches a single array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit
from scipy.special import expit

PROB_FLOOR = 1e-12


class ParamSet:
    """Flat float64 parameter vector with named, shaped views."""

    def __init__(self, shapes: dict[str, tuple[int, ...]], data: Optional[np.ndarray] = None):
        self.shapes = dict(shapes)
        self.slices: dict[str, slice] = {}
        offset = 0
        for name, shape in self.shapes.items():
            size = int(np.prod(shape, dtype=int))
            self.slices[name] = slice(offset, offset + size)
            offset += size
        self.size = offset
        if data is None:
            data = np.zeros(offset)
        if data.shape != (offset,):
            raise ValueError(f"expected flat vector of length {offset}, got {data.shape}")
        self.data = data

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[self.slices[name]].reshape(self.shapes[name])

    def zeros_like(self) -> "ParamSet":
        return ParamSet(self.shapes)

    def copy(self) -> "ParamSet":
        return ParamSet(self.shapes, self.data.copy())


@dataclass
class LstmParams:
    """Gate weights stacked in the order input, forget, candidate, output.

    ``W`` maps input to gates (input_dim x 4H), ``U`` maps the previous hidden
    state (H x 4H), ``b`` is the gate bias (4H).
    """

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.W.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.U.shape[0]

    @staticmethod
    def shapes(prefix: str, input_dim: int, hidden_dim: int) -> dict[str, tuple[int, ...]]:
        return {
            f"{prefix}.W": (input_dim, 4 * hidden_dim),
            f"{prefix}.U": (hidden_dim, 4 * hidden_dim),
            f"{prefix}.b": (4 * hidden_dim,),
        }

    @classmethod
    def view(cls, ps: ParamSet, prefix: str) -> "LstmParams":
        return cls(ps[f"{prefix}.W"], ps[f"{prefix}.U"], ps[f"{prefix}.b"])

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmParams":
        return cls.view(ParamSet(cls.shapes("p", input_dim, hidden_dim)), "p")


@dataclass
class DenseParams:
    W: np.ndarray  # in_dim x out_dim
    b: np.ndarray

    @staticmethod
    def shapes(prefix: str, in_dim: int, out_dim: int) -> dict[str, tuple[int, ...]]:
        return {f"{prefix}.W": (in_dim, out_dim), f"{prefix}.b": (out_dim,)}

    @classmethod
    def view(cls, ps: ParamSet, prefix: str) -> "DenseParams":
        return cls(ps[f"{prefix}.W"], ps[f"{prefix}.b"])


def init_lstm(p: LstmParams, rng: np.random.Generator, forget_bias: float = 1.0) -> None:
    H = p.hidden_dim
    p.W[...] = rng.uniform(-1, 1, p.W.shape) / np.sqrt(p.input_dim)
    p.U[...] = rng.uniform(-1, 1, p.U.shape) / np.sqrt(H)
    p.b[...] = 0.0
    p.b[H:2 * H] = forget_bias


def init_dense(p: DenseParams, rng: np.random.Generator) -> None:
    p.W[...] = rng.uniform(-1, 1, p.W.shape) / np.sqrt(p.W.shape[0])
    p.b[...] = 0.0


# ---------------------------------------------------------------------------
# LSTM


def lstm_step(x, h, c, p: LstmParams) -> tuple[np.ndarray, np.ndarray]:
    x, h, c = np.asarray(x, float), np.asarray(h, float), np.asarray(c, float)
    H = p.hidden_dim
    if x.shape != (p.input_dim,) or h.shape != (H,) or c.shape != (H,):
        raise ValueError(
            f"dimension mismatch: x{x.shape} h{h.shape} c{c.shape} for LSTM({p.input_dim}, {H})"
        )
    a = x @ p.W + h @ p.U + p.b
    i, f, o = expit(a[:H]), expit(a[H:2 * H]), expit(a[3 * H:])
    g = np.tanh(a[2 * H:3 * H])
    c_next = f * c + i * g
    return o * np.tanh(c_next), c_next


@dataclass
class _LstmCache:
    X: np.ndarray
    hs: np.ndarray  # T+1 hidden states, hs[0] = 0
    cs: np.ndarray
    gates: np.ndarray  # activated i, f, g, o per step
    tanh_c: np.ndarray
    cols: Optional[np.ndarray] = None  # active input columns, None for dense


def _as_sequence(seq, input_dim: int) -> np.ndarray:
    if len(seq) == 0:
        return np.zeros((0, input_dim))
    try:
        X = np.asarray(seq, dtype=float)
    except ValueError as exc:
        raise ValueError("ragged input sequence") from exc
    if X.ndim != 2 or X.shape[1] != input_dim:
        raise ValueError(f"expected sequence of {input_dim}-vectors, got shape {X.shape}")
    return X


def lstm_forward(X: np.ndarray, p: LstmParams) -> tuple[np.ndarray, _LstmCache]:
    """Run the LSTM over the rows of ``X`` from zero state; return the final hidden state."""
    T, H = len(X), p.hidden_dim
    hs = np.zeros((T + 1, H))
    cs = np.zeros((T + 1, H))
    gates = np.empty((T, 4 * H))
    tanh_c = np.empty((T, H))
    cols = _active_columns(X)
    if T:
        Z = X @ p.W if cols is None else X[:, cols] @ p.W[cols]
        _lstm_recurrence(Z + p.b, p.U, hs, cs, gates, tanh_c)
    return hs[T].copy(), _LstmCache(X, hs, cs, gates, tanh_c, cols)


def _active_columns(X: np.ndarray):
    # Hashed bag-of-words inputs touch few of their 768 columns; restricting the
    # input projection to those columns gives the same products without the zeros.
    if X.shape[1] < 128 or not len(X):
        return None
    cols = np.flatnonzero(X.any(axis=0))
    return cols if len(cols) * 4 < X.shape[1] else None


def lstm_backward(dh: np.ndarray, cache: _LstmCache, p: LstmParams, grad: LstmParams) -> None:
    """Backpropagate a gradient on the final hidden state; accumulate into ``grad``."""
    T, H = len(cache.X), p.hidden_dim
    if T == 0:
        return
    dA = np.empty((T, 4 * H))
    _lstm_recurrence_backward(np.asarray(dh, float), cache.gates, cache.cs, cache.tanh_c, p.U, dA)
    if cache.cols is None:
        grad.W += cache.X.T @ dA
    else:
        grad.W[cache.cols] += cache.X[:, cache.cols].T @ dA
    grad.U += cache.hs[:-1].T @ dA
    grad.b += dA.sum(axis=0)


@njit(cache=True, error_model="numpy")
def _lstm_recurrence(Z, U, hs, cs, gates, tanh_c):
    # Z holds the input projections x_t W + b for every step
    T, H = hs.shape[0] - 1, hs.shape[1]
    for t in range(T):
        a = Z[t] + hs[t] @ U
        for j in range(4 * H):
            if 2 * H <= j < 3 * H:
                gates[t, j] = np.tanh(a[j])
            else:
                gates[t, j] = 1.0 / (1.0 + np.exp(-a[j]))
        for j in range(H):
            cs[t + 1, j] = gates[t, H + j] * cs[t, j] + gates[t, j] * gates[t, 2 * H + j]
            tanh_c[t, j] = np.tanh(cs[t + 1, j])
            hs[t + 1, j] = gates[t, 3 * H + j] * tanh_c[t, j]


@njit(cache=True, error_model="numpy")
def _lstm_recurrence_backward(dh, gates, cs, tanh_c, U, dA):
    T, H = gates.shape[0], dh.shape[0]
    dh = dh.copy()
    dc = np.zeros(H)
    for t in range(T - 1, -1, -1):
        for j in range(H):
            i, f, g, o = gates[t, j], gates[t, H + j], gates[t, 2 * H + j], gates[t, 3 * H + j]
            dc[j] += dh[j] * o * (1.0 - tanh_c[t, j] ** 2)
            dA[t, j] = dc[j] * g * i * (1.0 - i)
            dA[t, H + j] = dc[j] * cs[t, j] * f * (1.0 - f)
            dA[t, 2 * H + j] = dc[j] * i * (1.0 - g * g)
            dA[t, 3 * H + j] = dh[j] * tanh_c[t, j] * o * (1.0 - o)
            dc[j] *= f
        dh = U @ dA[t]


def bilstm_forward(seq, fwd: LstmParams, bwd: LstmParams):
    X = _as_sequence(seq, fwd.input_dim)
    h_f, cache_f = lstm_forward(X, fwd)
    h_b, cache_b = lstm_forward(np.ascontiguousarray(X[::-1]), bwd)
    return np.concatenate([h_f, h_b]), (cache_f, cache_b)


def bilstm_backward(d_enc, caches, fwd, bwd, grad_fwd, grad_bwd) -> None:
    H = fwd.hidden_dim
    lstm_backward(d_enc[:H], caches[0], fwd, grad_fwd)
    lstm_backward(d_enc[H:], caches[1], bwd, grad_bwd)


def bilstm_encode(seq, fwd: LstmParams, bwd: LstmParams) -> np.ndarray:
    """[final forward hidden | final backward hidden]; zeros for an empty sequence."""
    return bilstm_forward(seq, fwd, bwd)[0]


# ---------------------------------------------------------------------------
# dense head, softmax, loss


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z))
    return e / e.sum()


def dense_forward(x, p: DenseParams, dropout_rate: float, training: bool, rng=None):
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError("dropout_rate must lie in [0, 1)")
    x = np.asarray(x, float)
    if training and dropout_rate > 0.0:
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        mask = (rng.random(x.shape) >= dropout_rate) / (1.0 - dropout_rate)
    else:
        mask = None
    xm = x if mask is None else x * mask
    probs = softmax(xm @ p.W + p.b)
    return probs, (xm, mask)


def dense_backward(d_logits, cache, p: DenseParams, grad: DenseParams) -> np.ndarray:
    """Accumulate parameter gradients; return the gradient w.r.t. the (unmasked) input."""
    xm, mask = cache
    grad.W += np.outer(xm, d_logits)
    grad.b += d_logits
    dx = p.W @ d_logits
    return dx if mask is None else dx * mask


def softmax_backward(probs: np.ndarray, d_probs: np.ndarray) -> np.ndarray:
    return probs * (d_probs - probs @ d_probs)


def dense_softmax(x, p: DenseParams, dropout_rate: float = 0.0, training: bool = False, rng=None):
    """Inverted dropout on the input (training only), affine map, softmax."""
    return dense_forward(x, p, dropout_rate, training, rng)[0]


def cross_entropy(probs, label: int) -> float:
    return -float(np.log(max(float(probs[label]), PROB_FLOOR)))


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdagradState:
    accum: np.ndarray
    eps: float = 1e-8

    @classmethod
    def fresh(cls, size_or_like, eps: float = 1e-8) -> "AdagradState":
        shape = np.shape(size_or_like) if np.ndim(size_or_like) else (int(size_or_like),)
        return cls(np.zeros(shape), eps)


def adagrad_step(params: np.ndarray, grads: np.ndarray, state: AdagradState,
                 lr: float = 0.005, weight_decay: float = 0.01, consume: bool = False,
                 spans: Optional[tuple[np.ndarray, np.ndarray]] = None):
    """In-place Adagrad update with L2 weight decay folded into the gradient.

    With ``consume=True`` the gradient buffer is zeroed in the same pass, ready
    for the next accumulation (it must then be a contiguous float64 array).
    ``spans`` = (starts, stops) restricts the update to those flat index ranges.
    Without weight decay, an entry with zero gradient is left unchanged anyway,
    so passing spans that cover every non-zero gradient gives the same result
    as the full update while touching far less memory.
    """
    params = np.asarray(params)
    if params.shape != np.shape(grads) or params.shape != state.accum.shape:
        raise ValueError("parameter, gradient and accumulator shapes differ")
    g = np.asarray(grads, float).reshape(-1)
    if consume and not (isinstance(grads, np.ndarray) and np.shares_memory(g, grads)):
        raise ValueError("consume=True needs a float64 gradient array updated in place")
    p, acc = params.reshape(-1), state.accum.reshape(-1)
    if spans is None:
        _adagrad_kernel(p, g, acc, 0, p.size, float(lr), float(weight_decay), float(state.eps), consume)
        return params, state
    if weight_decay != 0.0:
        raise ValueError("spans skip entries that weight decay would move; use the full update")
    starts, stops = (np.asarray(a, dtype=np.int64) for a in spans)
    if starts.shape != stops.shape or (starts < 0).any() or (stops > p.size).any() or (starts > stops).any():
        raise ValueError("spans must be [start, stop) ranges inside the parameter vector")
    _adagrad_spans(p, g, acc, starts, stops, float(lr), float(state.eps), consume)
    return params, state


_TINY = np.finfo(np.float64).tiny


@njit(cache=True, error_model="numpy")
def _adagrad_kernel(p, g, acc, lo, hi, lr, wd, eps, consume):
    # single fused pass over p[lo:hi].
    # Weights fed only by weight decay shrink geometrically; flushing subnormal
    # results to zero keeps them off the slow denormal path.
    for k in range(lo, hi):
        gk = g[k] + wd * p[k]
        acc[k] += gk * gk
        v = p[k] - lr * gk / (np.sqrt(acc[k]) + eps)
        p[k] = 0.0 if abs(v) < _TINY else v  # NaN passes through
        if consume:
            g[k] = 0.0


@njit(cache=True, error_model="numpy")
def _adagrad_spans(p, g, acc, starts, stops, lr, eps, consume):
    for s in range(starts.size):
        _adagrad_kernel(p, g, acc, starts[s], stops[s], lr, 0.0, eps, consume)


# ---------------------------------------------------------------------------
# gradient check


# central-difference stencils: offsets and weights, derivative = sum(w * f(x + o * eps)) / eps
_STENCILS = {
    2: ((1.0, -1.0), (0.5, -0.5)),
    4: ((2.0, 1.0, -1.0, -2.0), (-1 / 12, 8 / 12, -8 / 12, 1 / 12)),
}


def finite_diff_check(model, instance, label: int, eps: Optional[float] = None,
                      max_params: Optional[int] = 200, rng=None,
                      indices: Optional[Sequence[int]] = None, order: int = 2) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``model`` must expose a flat ``params`` array, ``loss(instance, label)`` and
    ``loss_and_grad(instance, label)`` (both deterministic). When the model has
    more than ``max_params`` scalars a random subset of that size is checked.

    ``order`` 2 is the usual two-point difference (default eps 1e-5). Order 4
    uses the five-point stencil (default eps 1e-3); its smaller truncation
    error allows a larger step, which keeps rounding noise in the loss from
    swamping very small gradient entries.
    """
    if order not in _STENCILS:
        raise ValueError(f"order must be one of {sorted(_STENCILS)}")
    if eps is None:
        eps = 1e-5 if order == 2 else 1e-3
    if not eps > 0:
        raise ValueError("eps must be positive")
    offsets, weights = _STENCILS[order]
    theta = model.params
    _, analytic = model.loss_and_grad(instance, label)
    if indices is None:
        if max_params is None or theta.size <= max_params:
            indices = np.arange(theta.size)
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            indices = rng.choice(theta.size, size=max_params, replace=False)
    worst = 0.0
    for k in indices:
        saved = theta[k]
        numeric = 0.0
        for o, w in zip(offsets, weights):
            theta[k] = saved + o * eps
            numeric += w * model.loss(instance, label)
        theta[k] = saved
        numeric /= eps
        a = analytic[k]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
