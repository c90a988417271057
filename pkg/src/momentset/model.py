"""Transformer encoder-decoder for joint moment retrieval and highlighting.

Video and query token features are projected into a shared space,
concatenated along the length axis, and encoded by a post-norm transformer
stack. A decoder with N trainable slot embeddings (starting from a zero
content stream, with the embeddings added to every attention input) emits
one candidate moment per slot; three heads read the states:

  * a linear saliency scorer over the encoder memory at video positions,
  * a 3-layer ReLU network ending in a sigmoid for (center, width) spans,
  * a linear foreground/background classifier with softmax.

The span and class heads are shared across decoder layers so every layer
can be supervised as a standalone predictor. Fixed sin/cos position tables
are added to the attention inputs (queries and keys, not values) of both
streams. One model instance runs one forward/backward at a time;
inference-only instances are shareable read-only across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import (
    ParamStore,
    Tensor,
    concat,
    dropout,
    linear,
    layernorm,
    multi_head_attention,
    relu,
    reshape,
    sigmoid,
    sinusoidal_pe,
    take,
    xavier_init,
)

FOREGROUND, BACKGROUND = 0, 1


@dataclass
class ModelConfig:
    video_feat_dim: int
    text_feat_dim: int
    d: int = 256
    layers: int = 2
    n_queries: int = 10
    heads: int = 8
    ffn_mult: int = 4
    dropout_transformer: float = 0.1
    dropout_input_proj: float = 0.5

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"hidden size {self.d} not divisible by heads {self.heads}")
        if self.n_queries < 1 or self.layers < 1:
            raise ValueError("n_queries and layers must be >= 1")
        if self.video_feat_dim < 1 or self.text_feat_dim < 1:
            raise ValueError("feature dims must be >= 1")


@dataclass
class Batch:
    """Padded example stack; lengths mark the real rows per example."""

    video: np.ndarray  # (B, Lv_max, Dv)
    video_len: np.ndarray  # (B,)
    query: np.ndarray  # (B, Lq_max, Dq)
    query_len: np.ndarray  # (B,)

    @property
    def size(self) -> int:
        return self.video.shape[0]


@dataclass
class ModelOutput:
    """Per-batch predictions; class index 0 is foreground, 1 background."""

    saliency: Tensor  # (B, Lv_max)
    layer_spans: list[Tensor]  # layers x (B, N, 2), (center, width) in (0,1)
    layer_class_logits: list[Tensor]  # layers x (B, N, 2)
    video_len: np.ndarray

    def spans(self, layer: int = -1) -> np.ndarray:
        return self.layer_spans[layer].data

    def class_probs(self, layer: int = -1) -> np.ndarray:
        logits = self.layer_class_logits[layer].data
        shifted = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)

    def fg_prob(self, layer: int = -1) -> np.ndarray:
        return self.class_probs(layer)[..., FOREGROUND]


def _l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


class MomentTransformer:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.params = ParamStore()
        self._pe_cache: dict[int, np.ndarray] = {}
        d = cfg.d
        self._proj("proj_video", cfg.video_feat_dim, d, rng)
        self._proj("proj_query", cfg.text_feat_dim, d, rng)
        for i in range(cfg.layers):
            self._attn(f"enc{i}.attn", d, rng)
            self._ln(f"enc{i}.ln1", d)
            self._ffn(f"enc{i}.ffn", d, cfg.ffn_mult, rng)
            self._ln(f"enc{i}.ln2", d)
        for i in range(cfg.layers):
            self._attn(f"dec{i}.self", d, rng)
            self._ln(f"dec{i}.ln1", d)
            self._attn(f"dec{i}.cross", d, rng)
            self._ln(f"dec{i}.ln2", d)
            self._ffn(f"dec{i}.ffn", d, cfg.ffn_mult, rng)
            self._ln(f"dec{i}.ln3", d)
        self.params.register("slots.embed", xavier_init((cfg.n_queries, d), rng))
        self.params.register("head_saliency.w", xavier_init((d, 1), rng))
        self.params.register("head_saliency.b", Tensor(np.zeros(1)))
        self.params.register("head_span.lin1.w", xavier_init((d, d), rng))
        self.params.register("head_span.lin1.b", Tensor(np.zeros(d)))
        self.params.register("head_span.lin2.w", xavier_init((d, d), rng))
        self.params.register("head_span.lin2.b", Tensor(np.zeros(d)))
        self.params.register("head_span.lin3.w", xavier_init((d, 2), rng))
        self.params.register("head_span.lin3.b", Tensor(np.zeros(2)))
        self.params.register("head_class.w", xavier_init((d, 2), rng))
        self.params.register("head_class.b", Tensor(np.zeros(2)))

    # -- parameter groups ------------------------------------------------
    def _proj(self, prefix: str, din: int, d: int, rng) -> None:
        reg = self.params.register
        reg(f"{prefix}.lin1.w", xavier_init((din, d), rng))
        reg(f"{prefix}.lin1.b", Tensor(np.zeros(d)))
        self._ln(f"{prefix}.ln1", d)
        reg(f"{prefix}.lin2.w", xavier_init((d, d), rng))
        reg(f"{prefix}.lin2.b", Tensor(np.zeros(d)))
        self._ln(f"{prefix}.ln2", d)

    def _attn(self, prefix: str, d: int, rng) -> None:
        reg = self.params.register
        for part in ("q", "k", "v", "o"):
            reg(f"{prefix}.w{part}", xavier_init((d, d), rng))
            reg(f"{prefix}.b{part}", Tensor(np.zeros(d)))

    def _ffn(self, prefix: str, d: int, mult: int, rng) -> None:
        reg = self.params.register
        reg(f"{prefix}.lin1.w", xavier_init((d, d * mult), rng))
        reg(f"{prefix}.lin1.b", Tensor(np.zeros(d * mult)))
        reg(f"{prefix}.lin2.w", xavier_init((d * mult, d), rng))
        reg(f"{prefix}.lin2.b", Tensor(np.zeros(d)))

    def _ln(self, prefix: str, d: int) -> None:
        self.params.register(f"{prefix}.g", Tensor(np.ones(d)))
        self.params.register(f"{prefix}.b", Tensor(np.zeros(d)))

    def _pe(self, length: int) -> np.ndarray:
        pe = self._pe_cache.get(length)
        if pe is None:
            pe = sinusoidal_pe(length, self.cfg.d).data
            self._pe_cache[length] = pe
        return pe

    # -- forward ----------------------------------------------------------
    def project_inputs(self, batch: Batch, training: bool, rng) -> tuple[Tensor, np.ndarray]:
        """L2-normalize and project both streams, concatenate along length.

        Returns the (B, Lv+Lq, d) input stack and a (B, L) validity mask
        whose first Lv_max columns are the video positions.
        """
        if batch.video.shape[1] < 1 or batch.query.shape[1] < 1:
            raise ValueError("empty video or query stream")
        p = self.cfg.dropout_input_proj
        video = self._project("proj_video", _l2_normalize_rows(batch.video), p, training, rng)
        query = self._project("proj_query", _l2_normalize_rows(batch.query), p, training, rng)
        x = concat([video, query], axis=1)
        b, lv_max = batch.video.shape[0], batch.video.shape[1]
        lq_max = batch.query.shape[1]
        mask = np.zeros((b, lv_max + lq_max), dtype=bool)
        for i in range(b):
            mask[i, : batch.video_len[i]] = True
            mask[i, lv_max : lv_max + batch.query_len[i]] = True
        return x, mask

    def _project(self, prefix: str, x: np.ndarray, p: float, training: bool, rng) -> Tensor:
        ps = self.params
        h = linear(Tensor(x), ps[f"{prefix}.lin1.w"], ps[f"{prefix}.lin1.b"])
        h = relu(layernorm(h, ps[f"{prefix}.ln1.g"], ps[f"{prefix}.ln1.b"]))
        h = dropout(h, p, training, rng)
        h = linear(h, ps[f"{prefix}.lin2.w"], ps[f"{prefix}.lin2.b"])
        h = layernorm(h, ps[f"{prefix}.ln2.g"], ps[f"{prefix}.ln2.b"])
        return dropout(h, p, training, rng)

    def encode(self, x: Tensor, mask: np.ndarray, training: bool, rng) -> Tensor:
        """Self-attention stack; position tables feed queries/keys only."""
        cfg = self.cfg
        ps = self.params
        pe = self._pe(x.shape[1])
        p = cfg.dropout_transformer
        key_mask = None if mask.all() else mask
        for i in range(cfg.layers):
            qk = x + pe
            attn = multi_head_attention(
                qk, qk, x, cfg.heads, key_mask=key_mask, **self._attn_kwargs(f"enc{i}.attn")
            )
            x = layernorm(x + dropout(attn, p, training, rng), ps[f"enc{i}.ln1.g"], ps[f"enc{i}.ln1.b"])
            x = self._ffn_block(f"enc{i}", x, p, training, rng, ln="ln2")
        return x

    def decode(self, memory: Tensor, mask: np.ndarray, training: bool, rng) -> list[Tensor]:
        """Slot decoding; returns every layer's state for aux supervision."""
        cfg = self.cfg
        ps = self.params
        b = memory.shape[0]
        embed = ps["slots.embed"]
        pe = self._pe(memory.shape[1])
        p = cfg.dropout_transformer
        key_mask = None if mask.all() else mask
        y = Tensor(np.zeros((b, cfg.n_queries, cfg.d)))
        states: list[Tensor] = []
        for i in range(cfg.layers):
            qk = y + embed
            sa = multi_head_attention(qk, qk, y, cfg.heads, **self._attn_kwargs(f"dec{i}.self"))
            y = layernorm(y + dropout(sa, p, training, rng), ps[f"dec{i}.ln1.g"], ps[f"dec{i}.ln1.b"])
            ca = multi_head_attention(
                y + embed,
                memory + pe,
                memory,
                cfg.heads,
                key_mask=key_mask,
                **self._attn_kwargs(f"dec{i}.cross"),
            )
            y = layernorm(y + dropout(ca, p, training, rng), ps[f"dec{i}.ln2.g"], ps[f"dec{i}.ln2.b"])
            y = self._ffn_block(f"dec{i}", y, p, training, rng, ln="ln3")
            states.append(y)
        return states

    def _attn_kwargs(self, prefix: str) -> dict:
        ps = self.params
        return {
            "wq": ps[f"{prefix}.wq"],
            "bq": ps[f"{prefix}.bq"],
            "wk": ps[f"{prefix}.wk"],
            "bk": ps[f"{prefix}.bk"],
            "wv": ps[f"{prefix}.wv"],
            "bv": ps[f"{prefix}.bv"],
            "wo": ps[f"{prefix}.wo"],
            "bo": ps[f"{prefix}.bo"],
        }

    def _ffn_block(self, prefix: str, x: Tensor, p: float, training: bool, rng, ln: str) -> Tensor:
        ps = self.params
        h = relu(linear(x, ps[f"{prefix}.ffn.lin1.w"], ps[f"{prefix}.ffn.lin1.b"]))
        h = dropout(h, p, training, rng)
        h = linear(h, ps[f"{prefix}.ffn.lin2.w"], ps[f"{prefix}.ffn.lin2.b"])
        x = x + dropout(h, p, training, rng)
        return layernorm(x, ps[f"{prefix}.{ln}.g"], ps[f"{prefix}.{ln}.b"])

    def heads(self, memory: Tensor, decoder_states: list[Tensor], lv_max: int) -> tuple:
        """Score saliency from video memory rows; span/class every layer."""
        ps = self.params
        video_mem = take(memory, np.s_[:, :lv_max, :])
        sal = linear(video_mem, ps["head_saliency.w"], ps["head_saliency.b"])
        sal = reshape(sal, (memory.shape[0], lv_max))
        layer_spans = []
        layer_logits = []
        for state in decoder_states:
            h = relu(linear(state, ps["head_span.lin1.w"], ps["head_span.lin1.b"]))
            h = relu(linear(h, ps["head_span.lin2.w"], ps["head_span.lin2.b"]))
            layer_spans.append(sigmoid(linear(h, ps["head_span.lin3.w"], ps["head_span.lin3.b"])))
            layer_logits.append(linear(state, ps["head_class.w"], ps["head_class.b"]))
        return sal, layer_spans, layer_logits

    def forward(self, batch: Batch, training: bool = False, rng: np.random.Generator | None = None) -> ModelOutput:
        if batch.video.shape[2] != self.cfg.video_feat_dim:
            raise ValueError(
                f"video feature dim {batch.video.shape[2]} != configured {self.cfg.video_feat_dim}"
            )
        if batch.query.shape[2] != self.cfg.text_feat_dim:
            raise ValueError(
                f"text feature dim {batch.query.shape[2]} != configured {self.cfg.text_feat_dim}"
            )
        if training and rng is None:
            raise ValueError("training-mode forward needs an rng for dropout")
        x, mask = self.project_inputs(batch, training, rng)
        memory = self.encode(x, mask, training, rng)
        states = self.decode(memory, mask, training, rng)
        sal, layer_spans, layer_logits = self.heads(memory, states, batch.video.shape[1])
        return ModelOutput(
            saliency=sal,
            layer_spans=layer_spans,
            layer_class_logits=layer_logits,
            video_len=np.asarray(batch.video_len),
        )

    def forward_example(
        self,
        video_feats: np.ndarray,
        query_feats: np.ndarray,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> ModelOutput:
        """Single-example convenience wrapper (batch of one)."""
        batch = Batch(
            video=np.asarray(video_feats, dtype=np.float64)[None],
            video_len=np.array([len(video_feats)]),
            query=np.asarray(query_feats, dtype=np.float64)[None],
            query_len=np.array([len(query_feats)]),
        )
        return self.forward(batch, training=training, rng=rng)
