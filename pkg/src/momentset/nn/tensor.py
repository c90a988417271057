"""Reverse-mode autodiff over a small fixed set of dense float64 ops.

A Tensor wraps a float64 ndarray plus an optional tape node (parents and a
backward closure). The op set is exactly what the moment model needs:
affine maps, layer normalization, ReLU/sigmoid/abs, softmax families,
dropout, elementwise arithmetic with broadcasting, reductions, indexing
and reshaping, and batched matrix multiplication. Everything runs in
double precision so finite-difference checks are tight.

A model instance and its tape belong to one worker at a time; independent
instances can run in parallel.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape construction inside the context (inference paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        """Raw value view; do not mutate while a tape references it."""
        return self.data

    def backward(self) -> None:
        """Backpropagate from a scalar output through the recorded tape."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        state: dict[int, int] = {}
        stack = [self]
        while stack:
            node = stack[-1]
            nid = id(node)
            st = state.get(nid)
            if st is None:
                state[nid] = 0
                for p in node._parents:
                    if p.requires_grad and state.get(id(p)) is None:
                        stack.append(p)
            elif st == 0:
                state[nid] = 1
                order.append(node)
                stack.pop()
            else:
                stack.pop()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _node(data: np.ndarray, parents: tuple, backward) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.requires_grad = True
    t._parents = parents
    t._backward = backward
    return t


def _const(data: np.ndarray) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data if isinstance(data, np.ndarray) and data.dtype == np.float64 else np.asarray(
        data, dtype=np.float64
    )
    t.grad = None
    t.requires_grad = False
    t._parents = ()
    t._backward = None
    return t


def _wants(x) -> bool:
    return isinstance(x, Tensor) and x.requires_grad


def _val(x):
    return x.data if isinstance(x, Tensor) else x


def _acc(t: Tensor, g: np.ndarray) -> None:
    """Accumulate a gradient contribution, taking ownership of `g` on first use.

    Closure contract: within one backward closure, at most one parent may
    receive an array aliasing the incoming gradient; all other parents
    must get freshly allocated arrays. Aliased buffers are never read
    again through their original owner (reverse-topological order), so
    later in-place accumulation is safe.
    """
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


def _acc_copy(t: Tensor, g: np.ndarray) -> None:
    """Accumulate without taking ownership (g stays with its owner)."""
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _acc_reduced(t: Tensor, g: np.ndarray, may_alias: bool) -> None:
    """Accumulate with broadcast reduction; copies only when an alias of g
    would otherwise be handed to this parent without permission."""
    r = _unbroadcast(g, t.data.shape)
    if r is g and not may_alias:
        _acc_copy(t, r)
    else:
        _acc(t, r)


# -- elementwise arithmetic ---------------------------------------------


def add(a, b) -> Tensor:
    ad, bd = _val(a), _val(b)
    out = ad + bd
    if not (_GRAD_ENABLED and (_wants(a) or _wants(b))):
        return _const(out)
    parents = tuple(t for t in (a, b) if _wants(t))

    def backward(g):
        if _wants(a):
            _acc_reduced(a, g, may_alias=True)
        if _wants(b):
            _acc_reduced(b, g, may_alias=not _wants(a))

    return _node(out, parents, backward)


def sub(a, b) -> Tensor:
    ad, bd = _val(a), _val(b)
    out = ad - bd
    if not (_GRAD_ENABLED and (_wants(a) or _wants(b))):
        return _const(out)
    parents = tuple(t for t in (a, b) if _wants(t))

    def backward(g):
        if _wants(a):
            _acc_reduced(a, g, may_alias=True)
        if _wants(b):
            _acc_reduced(b, -g, may_alias=True)

    return _node(out, parents, backward)


def mul(a, b) -> Tensor:
    ad, bd = _val(a), _val(b)
    out = ad * bd
    if not (_GRAD_ENABLED and (_wants(a) or _wants(b))):
        return _const(out)
    parents = tuple(t for t in (a, b) if _wants(t))

    def backward(g):
        if _wants(a):
            _acc(a, _unbroadcast(g * bd, a.data.shape))
        if _wants(b):
            _acc(b, _unbroadcast(g * ad, b.data.shape))

    return _node(out, parents, backward)


def div(a, b) -> Tensor:
    ad, bd = _val(a), _val(b)
    out = ad / bd
    if not (_GRAD_ENABLED and (_wants(a) or _wants(b))):
        return _const(out)
    parents = tuple(t for t in (a, b) if _wants(t))

    def backward(g):
        if _wants(a):
            _acc(a, _unbroadcast(g / bd, a.data.shape))
        if _wants(b):
            _acc(b, _unbroadcast(-g * ad / (bd * bd), b.data.shape))

    return _node(out, parents, backward)


def neg(a) -> Tensor:
    out = -_val(a)
    if not (_GRAD_ENABLED and _wants(a)):
        return _const(out)

    def backward(g):
        _acc(a, -g)

    return _node(out, (a,), backward)


def absolute(a) -> Tensor:
    ad = _val(a)
    out = np.abs(ad)
    if not (_GRAD_ENABLED and _wants(a)):
        return _const(out)

    def backward(g):
        _acc(a, g * np.sign(ad))

    return _node(out, (a,), backward)


def maximum(a, b) -> Tensor:
    """Elementwise max; on exact ties the gradient routes to `a`."""
    ad, bd = _val(a), _val(b)
    out = np.maximum(ad, bd)
    if not (_GRAD_ENABLED and (_wants(a) or _wants(b))):
        return _const(out)
    parents = tuple(t for t in (a, b) if _wants(t))
    a_side = ad >= bd

    def backward(g):
        if _wants(a):
            _acc(a, _unbroadcast(g * a_side, np.shape(ad)))
        if _wants(b):
            _acc(b, _unbroadcast(g * ~a_side, np.shape(bd)))

    return _node(out, parents, backward)


def minimum(a, b) -> Tensor:
    """Elementwise min; on exact ties the gradient routes to `a`."""
    ad, bd = _val(a), _val(b)
    out = np.minimum(ad, bd)
    if not (_GRAD_ENABLED and (_wants(a) or _wants(b))):
        return _const(out)
    parents = tuple(t for t in (a, b) if _wants(t))
    a_side = ad <= bd

    def backward(g):
        if _wants(a):
            _acc(a, _unbroadcast(g * a_side, np.shape(ad)))
        if _wants(b):
            _acc(b, _unbroadcast(g * ~a_side, np.shape(bd)))

    return _node(out, parents, backward)


def relu(a) -> Tensor:
    ad = _val(a)
    out = np.maximum(ad, 0.0)
    if not (_GRAD_ENABLED and _wants(a)):
        return _const(out)
    mask = ad > 0.0

    def backward(g):
        _acc(a, g * mask)

    return _node(out, (a,), backward)


def sigmoid(a) -> Tensor:
    ad = _val(a)
    z = np.exp(-np.abs(ad))
    out = np.where(ad >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    if not (_GRAD_ENABLED and _wants(a)):
        return _const(out)

    def backward(g):
        _acc(a, g * out * (1.0 - out))

    return _node(out, (a,), backward)


def log(a) -> Tensor:
    ad = _val(a)
    out = np.log(ad)
    if not (_GRAD_ENABLED and _wants(a)):
        return _const(out)

    def backward(g):
        _acc(a, g / ad)

    return _node(out, (a,), backward)


# -- matrix products ------------------------------------------------------


def matmul(a, b) -> Tensor:
    ad, bd = _val(a), _val(b)
    out = ad @ bd
    if not (_GRAD_ENABLED and (_wants(a) or _wants(b))):
        return _const(out)
    parents = tuple(t for t in (a, b) if _wants(t))

    def backward(g):
        if _wants(a):
            ga = g @ np.swapaxes(bd, -1, -2)
            _acc(a, _unbroadcast(ga, ad.shape))
        if _wants(b):
            gb = np.swapaxes(ad, -1, -2) @ g
            _acc(b, _unbroadcast(gb, bd.shape))

    return _node(out, parents, backward)


def linear(x, w, b=None) -> Tensor:
    """Affine map over the last axis: x @ w + b, fused into one tape node."""
    xd, wd = _val(x), _val(w)
    din, dout = wd.shape
    if xd.shape[-1] != din:
        raise ValueError(f"linear: input dim {xd.shape[-1]} != weight dim {din}")
    x2 = xd.reshape(-1, din)
    out2 = x2 @ wd
    if b is not None:
        out2 += _val(b)
    out = out2.reshape(xd.shape[:-1] + (dout,))
    need = _GRAD_ENABLED and (_wants(x) or _wants(w) or (b is not None and _wants(b)))
    if not need:
        return _const(out)
    parents = tuple(t for t in (x, w, b) if _wants(t))

    def backward(g):
        g2 = g.reshape(-1, dout)
        if _wants(x):
            _acc(x, (g2 @ wd.T).reshape(xd.shape))
        if _wants(w):
            _acc(w, x2.T @ g2)
        if b is not None and _wants(b):
            _acc(b, g2.sum(axis=0))

    return _node(out, parents, backward)


# -- normalization and probability ops ------------------------------------


def layernorm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance per row over the last axis, then gain/bias.

    Uses the population variance; eps absorbs zero-variance rows.
    """
    xd, gd, bd = _val(x), _val(gain), _val(bias)
    d = xd.shape[-1]
    mu = xd.mean(axis=-1, keepdims=True)
    xhat = xd - mu
    var = np.einsum("...i,...i->...", xhat, xhat)[..., None] / d
    inv = 1.0 / np.sqrt(var + eps)
    xhat *= inv
    out = xhat * gd
    out += bd
    need = _GRAD_ENABLED and (_wants(x) or _wants(gain) or _wants(bias))
    if not need:
        return _const(out)
    parents = tuple(t for t in (x, gain, bias) if _wants(t))

    def backward(g):
        if _wants(gain):
            _acc(gain, np.einsum("...i,...i->i", g.reshape(-1, d), xhat.reshape(-1, d)))
        if _wants(bias):
            _acc(bias, g.reshape(-1, d).sum(axis=0))
        if _wants(x):
            dxhat = g * gd
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = np.einsum("...i,...i->...", dxhat, xhat)[..., None] / d
            dxhat -= m1
            dxhat -= xhat * m2
            dxhat *= inv
            _acc(x, dxhat)

    return _node(out, parents, backward)


def softmax(x, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; rows sum to one."""
    xd = _val(x)
    shifted = xd - xd.max(axis=axis, keepdims=True)
    np.exp(shifted, out=shifted)
    out = shifted
    out /= out.sum(axis=axis, keepdims=True)
    if not (_GRAD_ENABLED and _wants(x)):
        return _const(out)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        dx = g - inner
        dx *= out
        _acc(x, dx)

    return _node(out, (x,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    xd = _val(x)
    shifted = xd - xd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    if not (_GRAD_ENABLED and _wants(x)):
        return _const(out)
    probs = np.exp(out)

    def backward(g):
        _acc(x, g - probs * g.sum(axis=axis, keepdims=True))

    return _node(out, (x,), backward)


def attention_core(q, k, v, mask_bias: np.ndarray | None = None) -> Tensor:
    """Fused scaled-dot-product core: softmax(q @ k^T + bias) @ v.

    q, k, v are (..., L, dh) head-split tensors with any scaling already
    applied to q. mask_bias (0 / -inf, broadcastable over the score shape)
    silences masked keys exactly. One tape node; the softmax runs in place
    on the score buffer.
    """
    qd, kd, vd = _val(q), _val(k), _val(v)
    scores = qd @ np.swapaxes(kd, -1, -2)
    if mask_bias is not None:
        scores += mask_bias
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    probs = scores
    out = probs @ vd
    need = _GRAD_ENABLED and (_wants(q) or _wants(k) or _wants(v))
    if not need:
        return _const(out)
    parents = tuple(t for t in (q, k, v) if _wants(t))

    def backward(g):
        if _wants(v):
            _acc(v, np.swapaxes(probs, -1, -2) @ g)
        dprobs = g @ np.swapaxes(vd, -1, -2)
        inner = np.einsum("...i,...i->...", dprobs, probs)[..., None]
        dprobs -= inner
        dprobs *= probs
        if _wants(q):
            _acc(q, dprobs @ kd)
        if _wants(k):
            _acc(k, np.swapaxes(dprobs, -1, -2) @ qd)

    return _node(out, parents, backward)


def cross_entropy(logits, labels: np.ndarray, class_weights: np.ndarray) -> Tensor:
    """Class-weighted negative log likelihood, normalized by applied weights.

    loss = sum_i w[y_i] * (-log softmax(logits_i)[y_i]) / sum_i w[y_i]
    """
    xd = _val(logits)
    n, k = xd.shape
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label index outside [0, num_classes)")
    weights = np.asarray(class_weights, dtype=np.float64)
    shifted = xd - xd.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(n)
    w = weights[labels]
    wsum = w.sum()
    out = np.asarray(-(w * logp[rows, labels]).sum() / wsum)
    if not (_GRAD_ENABLED and _wants(logits)):
        return _const(out)
    probs = np.exp(logp)

    def backward(g):
        grad = probs * w[:, None]
        grad[rows, labels] -= w
        grad *= float(g) / wsum
        _acc(logits, grad)

    return _node(out, (logits,), backward)


def dropout(x, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: keep with probability 1-p and rescale by 1/(1-p).

    Identity in eval mode or at p=0 (no rng draw in either case).
    """
    if not (0.0 <= p < 1.0):
        raise ValueError(f"dropout p must be in [0,1), got {p}")
    if not training or p == 0.0:
        return x if isinstance(x, Tensor) else _const(np.asarray(x, dtype=np.float64))
    xd = _val(x)
    # float32 uniforms: half the generator work, keep-probability exact to 2^-24
    scale = (rng.random(xd.shape, dtype=np.float32) >= p) * (1.0 / (1.0 - p))
    out = xd * scale
    if not (_GRAD_ENABLED and _wants(x)):
        return _const(out)

    def backward(g):
        _acc(x, g * scale)

    return _node(out, (x,), backward)


# -- reductions, indexing, shape ------------------------------------------


def _acc_broadcast(t: Tensor, gg: np.ndarray) -> None:
    """Accumulate a gradient that broadcasts over t's shape."""
    if t.grad is None:
        t.grad = np.empty_like(t.data)
        t.grad[...] = gg
    else:
        t.grad += gg


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    ad = _val(a)
    out = ad.sum(axis=axis, keepdims=keepdims)
    if not (_GRAD_ENABLED and _wants(a)):
        return _const(np.asarray(out))

    def backward(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
        _acc_broadcast(a, gg)

    return _node(np.asarray(out), (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    ad = _val(a)
    out = ad.mean(axis=axis, keepdims=keepdims)
    count = ad.size if axis is None else ad.shape[axis]
    if not (_GRAD_ENABLED and _wants(a)):
        return _const(np.asarray(out))

    def backward(g):
        gg = g / count
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _acc_broadcast(a, gg)

    return _node(np.asarray(out), (a,), backward)


def _is_basic_index(idx) -> bool:
    if isinstance(idx, (int, slice)):
        return True
    if isinstance(idx, tuple):
        return all(isinstance(e, (int, slice)) or e is Ellipsis for e in idx)
    return False


def take(a, idx) -> Tensor:
    """Indexing/slicing with scatter-add backward (supports index arrays)."""
    ad = _val(a)
    out = ad[idx]
    if not (_GRAD_ENABLED and _wants(a)):
        return _const(np.asarray(out))
    basic = _is_basic_index(idx)

    def backward(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        if basic:
            a.grad[idx] += g
        else:
            np.add.at(a.grad, idx, g)

    return _node(np.asarray(out), (a,), backward)


def reshape(a, shape) -> Tensor:
    ad = _val(a)
    out = ad.reshape(shape)
    if not (_GRAD_ENABLED and _wants(a)):
        return _const(out)

    def backward(g):
        _acc(a, g.reshape(ad.shape))

    return _node(out, (a,), backward)


def transpose(a, axes) -> Tensor:
    ad = _val(a)
    out = np.transpose(ad, axes)
    if not (_GRAD_ENABLED and _wants(a)):
        return _const(out)
    inv = np.argsort(axes)

    def backward(g):
        _acc(a, np.transpose(g, inv))

    return _node(out, (a,), backward)


def concat(tensors: list, axis: int = 0) -> Tensor:
    datas = [_val(t) for t in tensors]
    out = np.concatenate(datas, axis=axis)
    if not (_GRAD_ENABLED and any(_wants(t) for t in tensors)):
        return _const(out)
    parents = tuple(t for t in tensors if _wants(t))
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if _wants(t):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _acc(t, g[tuple(sl)])

    return _node(out, parents, backward)


# -- initializers and encodings --------------------------------------------


def xavier_init(shape: tuple[int, int], rng: np.random.Generator) -> Tensor:
    """Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)); 2D shapes only."""
    if len(shape) != 2:
        raise ValueError(f"xavier_init expects a 2D shape, got {shape}")
    fan_in, fan_out = shape
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def sinusoidal_pe(length: int, d: int) -> Tensor:
    """Fixed sin/cos position table: pe[pos, 2i] = sin(pos / 10000^(2i/d))."""
    if d % 2 != 0:
        raise ValueError(f"positional encoding dim must be even, got {d}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / d)
    pe = np.empty((length, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return Tensor(pe)
