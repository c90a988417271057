"""Multi-head scaled dot-product attention built from the tape ops."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, attention_core, concat, linear, mul, reshape, take, transpose


def key_mask_bias(valid: np.ndarray) -> np.ndarray:
    """Additive pre-softmax bias from a (B, Lk) validity mask.

    Invalid key positions get -inf so their attention weight is exactly 0.
    """
    bias = np.where(valid, 0.0, -np.inf)
    return bias[:, None, None, :]


def multi_head_attention(
    q,
    k,
    v,
    heads: int,
    *,
    wq: Tensor,
    bq: Tensor,
    wk: Tensor,
    bk: Tensor,
    wv: Tensor,
    bv: Tensor,
    wo: Tensor,
    bo: Tensor,
    key_mask: np.ndarray | None = None,
) -> Tensor:
    """Project q/k/v, attend per head at scale 1/sqrt(d/heads), re-project.

    q, k, v: (B, L, d) tensors (or (L, d), promoted to a batch of one).
    key_mask: optional (B, Lk) boolean validity mask; masked keys receive
    exactly zero attention weight via an additive -inf bias. When q and k
    are the same tensor (self-attention) their projections run as one
    packed matrix product.
    """
    squeeze = False
    if q.ndim == 2:
        same = q is k
        q = reshape(q, (1,) + q.shape)
        k = q if same else reshape(k, (1,) + k.shape)
        v = reshape(v, (1,) + v.shape)
        squeeze = True
    b, lq, d = q.shape
    lk = k.shape[1]
    if d % heads != 0:
        raise ValueError(f"model dim {d} not divisible by heads {heads}")
    dh = d // heads

    def split(t, length):
        t = reshape(t, (b, length, heads, dh))
        return transpose(t, (0, 2, 1, 3))

    if q is k:
        packed = linear(q, concat([wq, wk], axis=1), concat([bq, bk], axis=0))
        qh = split(take(packed, np.s_[:, :, :d]), lq)
        kh = split(take(packed, np.s_[:, :, d:]), lk)
    else:
        qh = split(linear(q, wq, bq), lq)
        kh = split(linear(k, wk, bk), lk)
    vh = split(linear(v, wv, bv), lk)

    qh = mul(qh, 1.0 / math.sqrt(dh))
    bias = None
    if key_mask is not None and not key_mask.all():
        bias = key_mask_bias(key_mask)
    ctx = attention_core(qh, kh, vh, bias)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (b, lq, d))
    out = linear(ctx, wo, bo)
    if squeeze:
        out = reshape(out, (lq, d))
    return out
