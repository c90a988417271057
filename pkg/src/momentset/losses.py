"""Training objective: localization, saliency ranking, and classification.

Per decoder layer, a fresh bipartite matching pairs ground-truth moments
with prediction slots; matched pairs contribute an L1 + (1 - gIoU) span
penalty, and all slots contribute a class-weighted cross-entropy where
unmatched slots carry the background label at down-weight 0.1. The
saliency term is a two-pair ranking hinge over the encoder scores,
computed once (it reads the encoder, which has no per-layer analog).

The total is a fixed-order weighted recombination,

    total = ls * saliency
          + sum over layers of (lcls * cls + ll1 * l1 + liou * iou)

so the float recombination of the reported terms reproduces it exactly.
Pure given an explicit RNG handle; batch items are independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .matching import Assignment, GroundTruthSet, _cost_matrix_arrays, hungarian
from .model import BACKGROUND, FOREGROUND, ModelOutput
from .nn import Tensor
from .spans import SpanCW, cw_to_se, giou

SALIENCY_RESAMPLE_TRIES = 10


@dataclass
class LossConfig:
    lambda_l1: float = 10.0
    lambda_iou: float = 1.0
    lambda_cls: float = 4.0
    lambda_saliency: float = 1.0
    margin: float = 0.2
    bg_weight: float = 0.1
    pretrain_mode: bool = False

    def __post_init__(self):
        for name in ("lambda_l1", "lambda_iou", "lambda_cls", "lambda_saliency", "margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class SaliencyTargets:
    """Per-clip ranking targets: summed annotator scores, -1 off-moment."""

    agg_scores: np.ndarray  # (L_v,) float, -1 sentinel outside moments
    in_moment: np.ndarray  # (L_v,) bool

    def __post_init__(self):
        self.agg_scores = np.asarray(self.agg_scores, dtype=np.float64)
        self.in_moment = np.asarray(self.in_moment, dtype=bool)
        if self.agg_scores.shape != self.in_moment.shape:
            raise ValueError("agg_scores and in_moment must align")
        if not np.array_equal(self.in_moment, self.agg_scores >= 0):
            raise ValueError("in_moment must be true exactly where agg_scores >= 0")


@dataclass
class LayerTerms:
    l1: float
    iou: float
    cls: float


@dataclass
class LossBreakdown:
    """Raw (unweighted) loss terms plus the weighted total.

    total == lambda_saliency * saliency followed by, per layer in order,
    += lambda_cls * cls, += lambda_l1 * l1, += lambda_iou * iou — exactly,
    in that float evaluation order. The headline l1/iou/cls fields are the
    plain sums of the per-layer values.
    """

    total: float
    saliency: float
    l1: float
    iou: float
    cls: float
    per_layer: list[LayerTerms] = field(default_factory=list)
    total_tensor: Tensor | None = None


# -- value-level single-term forms (oracles for the taped assembly) -------


def moment_loss(gt: SpanCW, pred: SpanCW, cfg: LossConfig) -> float:
    """lambda_l1 * |gt - pred|_1 + lambda_iou * (1 - gIoU), on one pair."""
    l1 = abs(gt.center - pred.center) + abs(gt.width - pred.width)
    g = giou(cw_to_se(gt), cw_to_se(pred))
    return cfg.lambda_l1 * l1 + cfg.lambda_iou * (1.0 - g)


def sample_saliency_pairs(
    targets: SaliencyTargets, cfg: LossConfig, rng: np.random.Generator
) -> tuple[tuple[int, int] | None, tuple[int, int] | None]:
    """Draw the (high, low) in-moment pair and the (in, out) pair.

    high/low: draw a low clip uniformly among in-moment clips, then a high
    clip uniformly among in-moment clips with a strictly greater summed
    score; retried up to 10 times, skipped when no strict ordering exists.
    Dropped entirely in pretrain mode (scores are absent there).
    in/out: uniform in-moment vs uniform off-moment clip; skipped when the
    moments cover the whole video.
    """
    in_idx = np.flatnonzero(targets.in_moment)
    out_idx = np.flatnonzero(~targets.in_moment)
    if in_idx.size == 0:
        raise ValueError("saliency targets contain no in-moment clip")

    high_low = None
    if not cfg.pretrain_mode:
        scores = targets.agg_scores
        for _ in range(SALIENCY_RESAMPLE_TRIES):
            low = int(rng.choice(in_idx))
            stronger = in_idx[scores[in_idx] > scores[low]]
            if stronger.size:
                high = int(rng.choice(stronger))
                high_low = (high, low)
                break

    in_out = None
    if out_idx.size:
        in_out = (int(rng.choice(in_idx)), int(rng.choice(out_idx)))
    return high_low, in_out


def saliency_loss(
    saliency: np.ndarray, targets: SaliencyTargets, cfg: LossConfig, rng: np.random.Generator
) -> float:
    """Two-pair ranking hinge on plain score arrays (value-level form)."""
    high_low, in_out = sample_saliency_pairs(targets, cfg, rng)
    total = 0.0
    if high_low is not None:
        high, low = high_low
        total += max(0.0, cfg.margin + float(saliency[low]) - float(saliency[high]))
    if in_out is not None:
        t_in, t_out = in_out
        total += max(0.0, cfg.margin + float(saliency[t_out]) - float(saliency[t_in]))
    return total


def classification_loss(class_probs: np.ndarray, assignment: Assignment, cfg: LossConfig) -> float:
    """Weighted-mean negative log-probability over all N slots.

    Matched slots take the foreground label at weight 1, everything else
    background at bg_weight; the mean normalizes by the applied weights.
    """
    n = class_probs.shape[0]
    labels = np.full(n, BACKGROUND)
    for _, pred in assignment.pairs:
        labels[pred] = FOREGROUND
    weights = np.where(labels == FOREGROUND, 1.0, cfg.bg_weight)
    nll = -np.log(class_probs[np.arange(n), labels])
    return float((weights * nll).sum() / weights.sum())


# -- taped assembly ---------------------------------------------------------


def _match_layer(
    spans_cw: np.ndarray, fg_prob: np.ndarray, gts_cw: np.ndarray, cfg: LossConfig
) -> Assignment:
    cost = _cost_matrix_arrays(fg_prob, spans_cw, gts_cw, cfg)
    return hungarian(cost, canonical=False)


def _giou_tensor(pred_spans: Tensor, gt_se: np.ndarray) -> Tensor:
    """gIoU of (K, 2) predicted (center, width) vs constant (K, 2) spans.

    Assumes positive widths on both sides (sigmoid head, real moments), so
    the degenerate guards of the value-level form are not needed.
    """
    c = pred_spans[:, 0]
    half = pred_spans[:, 1] * 0.5
    ps = c - half
    pe = c + half
    gs, ge = gt_se[:, 0], gt_se[:, 1]
    inter = nn.relu(nn.minimum(pe, ge) - nn.maximum(ps, gs))
    union = (pe - ps) + (ge - gs) - inter
    hull = nn.maximum(pe, ge) - nn.minimum(ps, gs)
    return inter / union - (hull - union) / hull


def batch_total_loss(
    outputs: ModelOutput,
    gt_sets: list[GroundTruthSet],
    sal_targets: list[SaliencyTargets],
    cfg: LossConfig,
    rng: np.random.Generator,
) -> tuple[Tensor, LossBreakdown]:
    """Batch-mean objective with per-layer matching, on the tape.

    Returns the scalar loss tensor and a breakdown whose float terms are
    batch means; equals the mean of per-example total_loss values.
    """
    b = len(gt_sets)
    if b != outputs.saliency.shape[0]:
        raise ValueError("batch size mismatch between outputs and targets")
    n_layers = len(outputs.layer_spans)

    # saliency term, once per example from the encoder scores
    sal_value: Tensor | None = None
    if cfg.lambda_saliency > 0.0:
        row_ids: list[int] = []
        top_ids: list[int] = []
        bot_ids: list[int] = []
        for i in range(b):
            high_low, in_out = sample_saliency_pairs(sal_targets[i], cfg, rng)
            for pair in (high_low, in_out):
                if pair is not None:
                    row_ids.append(i)
                    top_ids.append(pair[0])
                    bot_ids.append(pair[1])
        if row_ids:
            rows = np.asarray(row_ids)
            s_top = outputs.saliency[(rows, np.asarray(top_ids))]
            s_bot = outputs.saliency[(rows, np.asarray(bot_ids))]
            sal_value = nn.tsum(nn.relu(cfg.margin + s_bot - s_top)) / b

    if sal_value is not None:
        total = cfg.lambda_saliency * sal_value
        saliency_f = float(sal_value.item())
    else:
        total = Tensor(np.asarray(0.0))
        saliency_f = 0.0

    gts_cw_all = [np.array([[s.center, s.width] for s in g.spans]) for g in gt_sets]
    per_layer: list[LayerTerms] = []
    for layer in range(n_layers):
        spans_t = outputs.layer_spans[layer]
        logits_t = outputs.layer_class_logits[layer]
        spans_np = spans_t.data
        fg = outputs.fg_prob(layer)

        idx_b: list[int] = []
        idx_slot: list[int] = []
        gt_rows: list[np.ndarray] = []
        labels = np.full((b, logits_t.shape[1]), BACKGROUND)
        for i in range(b):
            gts_cw = gts_cw_all[i]
            assign = _match_layer(spans_np[i], fg[i], gts_cw, cfg)
            for gt_j, pred_j in assign.pairs:
                idx_b.append(i)
                idx_slot.append(pred_j)
                gt_rows.append(gts_cw[gt_j])
                labels[i, pred_j] = FOREGROUND

        # classification over every slot, weighted mean per example
        if cfg.lambda_cls > 0.0:
            n_slots = logits_t.shape[1]
            flat_logits = nn.reshape(logits_t, (b * n_slots, 2))
            logp = nn.log_softmax(flat_logits, axis=-1)
            picked = nn.take(logp, (np.arange(b * n_slots), labels.reshape(-1)))
            w = np.where(labels.reshape(-1) == FOREGROUND, 1.0, cfg.bg_weight)
            weighted = nn.reshape(nn.mul(picked, -w), (b, n_slots))
            per_ex = nn.tsum(weighted, axis=1) / labels_weight_sums(labels, cfg)
            cls_value = nn.tmean(per_ex)
        else:
            cls_value = None

        if idx_b and (cfg.lambda_l1 > 0.0 or cfg.lambda_iou > 0.0):
            sel = (np.asarray(idx_b), np.asarray(idx_slot))
            matched = spans_t[sel]  # (K, 2)
            gt_cw = np.stack(gt_rows)
            l1_value = nn.tsum(nn.absolute(matched - gt_cw)) / b if cfg.lambda_l1 > 0.0 else None
            if cfg.lambda_iou > 0.0:
                gt_se = np.stack([gt_cw[:, 0] - gt_cw[:, 1] / 2.0, gt_cw[:, 0] + gt_cw[:, 1] / 2.0], axis=1)
                iou_value = nn.tsum(1.0 - _giou_tensor(matched, gt_se)) / b
            else:
                iou_value = None
        else:
            l1_value = iou_value = None

        cls_f = float(cls_value.item()) if cls_value is not None else 0.0
        l1_f = float(l1_value.item()) if l1_value is not None else 0.0
        iou_f = float(iou_value.item()) if iou_value is not None else 0.0
        per_layer.append(LayerTerms(l1=l1_f, iou=iou_f, cls=cls_f))

        if cls_value is not None:
            total = total + cfg.lambda_cls * cls_value
        if l1_value is not None:
            total = total + cfg.lambda_l1 * l1_value
        if iou_value is not None:
            total = total + cfg.lambda_iou * iou_value

    breakdown = LossBreakdown(
        total=float(total.item()),
        saliency=saliency_f,
        l1=math.fsum(t.l1 for t in per_layer),
        iou=math.fsum(t.iou for t in per_layer),
        cls=math.fsum(t.cls for t in per_layer),
        per_layer=per_layer,
        total_tensor=total,
    )
    return total, breakdown


def labels_weight_sums(labels: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Per-example normalizer for the weighted-mean classification term."""
    fg_counts = (labels == FOREGROUND).sum(axis=1)
    return fg_counts * 1.0 + (labels.shape[1] - fg_counts) * cfg.bg_weight


def total_loss(
    outputs: ModelOutput,
    gts: GroundTruthSet,
    sal_targets: SaliencyTargets,
    cfg: LossConfig,
    rng: np.random.Generator,
    example: int = 0,
) -> LossBreakdown:
    """Single-example objective; outputs may hold a larger batch.

    The breakdown's total_tensor stays on the tape, so calling backward()
    on it drives gradients into the model parameters.
    """
    if example != 0 or outputs.saliency.shape[0] != 1:
        outputs = _slice_output(outputs, example)
    _, breakdown = batch_total_loss(outputs, [gts], [sal_targets], cfg, rng)
    return breakdown


def _slice_output(outputs: ModelOutput, example: int) -> ModelOutput:
    sl = np.s_[example : example + 1]
    return ModelOutput(
        saliency=outputs.saliency[sl],
        layer_spans=[t[sl] for t in outputs.layer_spans],
        layer_class_logits=[t[sl] for t in outputs.layer_class_logits],
        video_len=outputs.video_len[sl],
    )
