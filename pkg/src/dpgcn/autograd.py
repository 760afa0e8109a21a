"""Minimal reverse-mode differentiation over dense float64 matrices.

Every op produces a 2-D :class:`Tensor`. While a :class:`Tape` is active, ops
whose inputs require gradients append a record to it; ``Tape.backward`` walks
the records in reverse execution order. Only the ops the model needs are here.

    with Tape() as tape:
        loss = nll_loss(log_softmax_rows(x @ w), labels)
    tape.backward(loss)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Container, Optional, Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_tape")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        v = np.asarray(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v.reshape(-1, 1)
        elif v.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {v.shape}")
        self.value = v
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._tape: Optional[Tape] = None

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ValueError("item() needs a single-element tensor")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


def parameter(value, name: str = "") -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


_active: list["Tape"] = []


@dataclass
class Tape:
    records: list = field(default_factory=list)
    consumed: bool = False

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)
        return False

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise RuntimeError("tape already consumed by backward(); run the forward pass again")
        if loss.value.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise RuntimeError("loss was not recorded on this tape")
        self.consumed = True
        loss.grad = np.ones_like(loss.value)
        for rec in reversed(self.records):
            g = rec.out.grad
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if not inp.requires_grad:
                    continue
                if gi is None:
                    gi = np.zeros_like(inp.value)
                if inp.grad is None:
                    inp.grad = np.array(gi, dtype=np.float64, copy=True).reshape(inp.value.shape)
                else:
                    inp.grad += gi
        self.records.clear()


def backward(loss: Tensor) -> None:
    if loss._tape is None:
        raise RuntimeError("loss has no tape; was it computed inside `with Tape():`?")
    loss._tape.backward(loss)


def _record(value: np.ndarray, inputs: tuple, bw) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    if needs and _active:
        tape = _active[-1]
        if tape.consumed:
            raise RuntimeError("cannot record on a consumed tape")
        out._tape = tape
        tape.records.append(_Record(out, inputs, bw))
    return out


def _check_finite(name: str, v: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(v)):
        raise FloatingPointError(f"{name} produced non-finite values")
    return v


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def spmm(s, x: Tensor) -> Tensor:
    """Constant sparse matrix times tensor."""
    s = s if sp.issparse(s) else getattr(s, "matrix", None)
    if s is None:
        raise TypeError("spmm needs a scipy sparse matrix or NormalizedAdjacency")
    s = s.tocsr()
    if s.shape[1] != x.shape[0]:
        raise ValueError(f"spmm shape mismatch: {s.shape} x {x.shape}")
    return _record(np.asarray(s @ x.value), (x,), lambda g: (np.asarray(s.T @ g),))


def add(a: Tensor, b: Tensor) -> Tensor:
    v = a.value + b.value
    return _record(v, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; an ``n x 1`` operand broadcasts across columns."""
    av, bv = a.value, b.value
    v = av * bv
    return _record(v, (a, b),
                   lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _record(a.value * c, (a,), lambda g: (g * c,))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ValueError(f"concat_cols row mismatch: {[p.shape for p in parts]}")
    widths = np.cumsum([0] + [p.shape[1] for p in parts])

    def bw(g):
        return tuple(g[:, widths[i]:widths[i + 1]] for i in range(len(parts)))

    return _record(np.concatenate([p.value for p in parts], axis=1), tuple(parts), bw)


def columns(a: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.value)
        full[:, start:stop] = g
        return (full,)

    return _record(a.value[:, start:stop].copy(), (a,), bw)


def total(a: Tensor) -> Tensor:
    return _record(np.array([[a.value.sum()]]), (a,), lambda g: (np.full_like(a.value, g[0, 0]),))


# -- nonlinearities ----------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    pos = x.value > 0
    return _record(np.where(pos, x.value, 0.0), (x,), lambda g: (g * pos,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.value > 0
    k = np.where(pos, 1.0, slope)
    return _record(x.value * k, (x,), lambda g: (g * k,))


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    pos = x.value > 0
    ex = np.exp(np.minimum(x.value, 0.0))
    v = np.where(pos, x.value, alpha * (ex - 1.0))
    d = np.where(pos, 1.0, alpha * ex)
    return _record(v, (x,), lambda g: (g * d,))


def log_softmax_rows(x: Tensor) -> Tensor:
    z = x.value - x.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = _check_finite("log_softmax_rows", z - lse)
    p = np.exp(out)
    return _record(out, (x,), lambda g: (g - p * g.sum(axis=1, keepdims=True),))


def softmax_rows(x: Tensor) -> Tensor:
    z = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return _record(p, (x,), lambda g: (p * (g - (g * p).sum(axis=1, keepdims=True)),))


def softmax_pair(e_c: Tensor, e_t: Tensor) -> tuple[Tensor, Tensor]:
    """Two-way softmax per row; the returned weights sum to one elementwise."""
    if e_c.shape != e_t.shape or e_c.shape[1] != 1:
        raise ValueError(f"softmax_pair needs matching n x 1 inputs, got {e_c.shape}, {e_t.shape}")
    p = softmax_rows(concat_cols([e_c, e_t]))
    return columns(p, 0, 1), columns(p, 1, 2)


def l2_normalize_rows(x: Tensor) -> Tensor:
    """Rows scaled to unit L2 norm. All-zero rows stay zero and pass no gradient."""
    norm = np.sqrt((x.value ** 2).sum(axis=1, keepdims=True))
    zero = norm[:, 0] == 0
    if zero.any():
        log.debug("l2_normalize_rows: %d zero row(s) left unnormalized", int(zero.sum()))
    safe = np.where(norm == 0, 1.0, norm)
    y = np.where(norm == 0, 0.0, x.value / safe)

    def bw(g):
        gx = (g - y * (g * y).sum(axis=1, keepdims=True)) / safe
        gx[zero] = 0.0
        return (gx,)

    return _record(y, (x,), bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    if rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _record(x.value * keep, (x,), lambda g: (g * keep,))


# -- loss --------------------------------------------------------------------

def nll_loss(log_probs: Tensor, labels, mask=None, weights=None) -> Tensor:
    """Weighted mean of ``-log_probs[i, y_i]`` over masked nodes.

    ``mask`` selects nodes (bool array); ``weights`` are optional per-node loss
    weights and default to one.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n, c = log_probs.shape
    sel = np.ones(n, bool) if mask is None else np.asarray(mask, bool)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    w = np.where(sel, w, 0.0)
    wsum = w.sum()
    if not sel.any() or wsum <= 0:
        raise ValueError("nll_loss: empty training mask")
    idx = np.nonzero(w)[0]
    y = labels[idx]
    if y.min() < 0 or y.max() >= c:
        raise ValueError("nll_loss: label outside [0, C) for a masked node")
    v = -(w[idx] * log_probs.value[idx, y]).sum() / wsum

    def bw(g):
        gl = np.zeros_like(log_probs.value)
        gl[idx, y] = -w[idx] / wsum * g[0, 0]
        return (gl,)

    return _record(np.array([[v]]), (log_probs,), bw)


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-4
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, state: AdamState, decay: Optional[Container[str]] = None) -> None:
    """One Adam update, then clear gradients.

    L2 weight decay is added to the gradient of the parameters named in
    ``decay`` (all of them when ``decay`` is None).
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = np.zeros_like(p.value) if p.grad is None else p.grad
        if state.weight_decay and (decay is None or name in decay):
            g = g + state.weight_decay * p.value
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, name: str = "") -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-limit, limit, size=(fan_in, fan_out)), name=name)
