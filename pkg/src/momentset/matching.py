"""Bipartite assignment between predicted and ground-truth moments.

The matching cost for a (prediction, ground truth) pair combines the
prediction's foreground probability with the span localization penalty:

    cost = -fg_prob + lambda_l1 * |cw_gt - cw_pred|_1 + lambda_iou * (1 - gIoU)

Only real ground-truth moments get columns; background padding never
materializes in the cost matrix. The solver assigns every ground-truth
column to a distinct prediction row, minimizing total cost, with ties
broken toward the lexicographically smallest (gt_index, pred_index) list.
All functions are pure and reentrant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations
from typing import TYPE_CHECKING

import numpy as np

from .spans import SpanCW, giou_matrix

if TYPE_CHECKING:
    from .losses import LossConfig

BRUTE_FORCE_MAX = 7


@dataclass(frozen=True)
class PredictionSet:
    """N candidate moments with their foreground probabilities."""

    spans: tuple[SpanCW, ...]
    fg_prob: tuple[float, ...]

    def __post_init__(self):
        if len(self.spans) != len(self.fg_prob):
            raise ValueError("spans and fg_prob must have equal length")
        for p in self.fg_prob:
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"fg_prob {p} outside [0,1]")


@dataclass(frozen=True)
class GroundTruthSet:
    """The M real moments of one query; background padding is implicit."""

    spans: tuple[SpanCW, ...]

    def __post_init__(self):
        if len(self.spans) < 1:
            raise ValueError("at least one ground-truth moment required")


@dataclass(frozen=True)
class Assignment:
    """Injective map of ground-truth moments onto prediction slots.

    pairs holds (gt_index, pred_index) sorted by gt_index; total_cost is
    the exactly-rounded sum (math.fsum) of the matrix entries at pairs.
    """

    pairs: tuple[tuple[int, int], ...]
    total_cost: float


def matching_cost(pred: tuple[float, SpanCW], gt: SpanCW, loss_cfg: "LossConfig") -> float:
    """Cost of assigning one prediction to one ground-truth moment."""
    fg_prob, span = pred
    c = np.array([[span.center, span.width]])
    g = np.array([[gt.center, gt.width]])
    return float(_cost_matrix_arrays(np.array([fg_prob]), c, g, loss_cfg)[0, 0])


def _cost_matrix_arrays(
    fg_prob: np.ndarray,
    spans_cw: np.ndarray,
    gts_cw: np.ndarray,
    loss_cfg: "LossConfig",
) -> np.ndarray:
    """Vectorized cost matrix from (N,), (N,2) predictions and (M,2) targets."""
    l1 = np.abs(spans_cw[:, None, :] - gts_cw[None, :, :]).sum(axis=2)
    pred_se = np.stack(
        [spans_cw[:, 0] - spans_cw[:, 1] / 2.0, spans_cw[:, 0] + spans_cw[:, 1] / 2.0], axis=1
    )
    gt_se = np.stack(
        [gts_cw[:, 0] - gts_cw[:, 1] / 2.0, gts_cw[:, 0] + gts_cw[:, 1] / 2.0], axis=1
    )
    g = giou_matrix(pred_se, gt_se)
    return -fg_prob[:, None] + loss_cfg.lambda_l1 * l1 + loss_cfg.lambda_iou * (1.0 - g)


def cost_matrix(preds: PredictionSet, gts: GroundTruthSet, loss_cfg: "LossConfig") -> np.ndarray:
    """(N, M) matrix with entry (i, j) = matching_cost(pred i, gt j)."""
    if len(gts.spans) > len(preds.spans):
        raise ValueError("more ground-truth moments than prediction slots")
    fg = np.asarray(preds.fg_prob, dtype=np.float64)
    spans = np.array([[s.center, s.width] for s in preds.spans], dtype=np.float64)
    tgt = np.array([[s.center, s.width] for s in gts.spans], dtype=np.float64)
    return _cost_matrix_arrays(fg, spans, tgt, loss_cfg)


def _solve_columns(cost_rows: list[list[float]], gt_ids: list[int], pred_ids: list[int]) -> list[int]:
    """Assign every listed gt to a distinct listed pred, minimizing total cost.

    Shortest-augmenting-path with potentials; cost_rows is indexed
    [pred][gt] over the *original* matrix. Returns the chosen pred id per
    gt id, in gt_ids order.
    """
    m, n = len(gt_ids), len(pred_ids)
    INF = math.inf
    u = [0.0] * (m + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[j] = 1-based gt currently on pred column j
    way = [0] * (n + 1)
    for i in range(1, m + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = -1
            gt_row = gt_ids[i0 - 1]
            ui0 = u[i0]
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost_rows[pred_ids[j - 1]][gt_row] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    pred_of_gt = [-1] * m
    for j in range(1, n + 1):
        if p[j]:
            pred_of_gt[p[j] - 1] = pred_ids[j - 1]
    return pred_of_gt


def _pairs_total(cost_rows: list[list[float]], pairs: list[tuple[int, int]]) -> float:
    return math.fsum(cost_rows[pred][gt] for gt, pred in pairs)


def hungarian(cost: np.ndarray, *, canonical: bool = True) -> Assignment:
    """Minimum-cost injection of gt columns into prediction rows.

    Among equal-cost optima, returns the lexicographically smallest
    (gt_index, pred_index) pair list; the canonicalization fixes one gt at
    a time and re-solves the remainder, accepting a row only when the
    completed total still equals the optimum exactly. canonical=False
    skips that pass and returns the solver's own optimum directly (still
    deterministic; used on hot paths where cost ties have measure zero).
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"cost matrix must be 2D, got shape {c.shape}")
    n, m = c.shape
    if m < 1 or n < 1:
        raise ValueError("cost matrix must be non-empty")
    if m > n:
        raise ValueError(f"more gt columns ({m}) than prediction rows ({n})")
    if not np.isfinite(c).all():
        raise ValueError("cost matrix contains non-finite entries")

    rows = c.tolist()
    all_gts = list(range(m))
    all_preds = list(range(n))
    base = _solve_columns(rows, all_gts, all_preds)
    base_pairs = [(j, base[j]) for j in range(m)]
    best_total = _pairs_total(rows, base_pairs)
    if not canonical:
        return Assignment(pairs=tuple(base_pairs), total_cost=best_total)

    fixed: list[tuple[int, int]] = []
    used: set[int] = set()
    for gt in range(m):
        accepted = False
        for pred in range(n):
            if pred in used:
                continue
            rest_gts = list(range(gt + 1, m))
            rest_preds = [r for r in all_preds if r not in used and r != pred]
            if rest_gts:
                rest = _solve_columns(rows, rest_gts, rest_preds)
                candidate = fixed + [(gt, pred)] + list(zip(rest_gts, rest))
            else:
                candidate = fixed + [(gt, pred)]
            if _pairs_total(rows, candidate) == best_total:
                fixed.append((gt, pred))
                used.add(pred)
                accepted = True
                break
        if not accepted:
            # float potentials failed to certify a tie; keep the base optimum
            fixed = base_pairs
            used = {pred for _, pred in base_pairs}
            break

    pairs = tuple(sorted(fixed))
    return Assignment(pairs=pairs, total_cost=_pairs_total(rows, list(pairs)))


def brute_force_assignment(cost: np.ndarray) -> Assignment:
    """Exhaustive oracle: enumerate every injection of gt columns into rows.

    Enumeration order is lexicographic in the pred-index sequence, and the
    first strict minimum wins, so ties resolve exactly as hungarian's
    canonical order. Guarded to N <= 7 rows.
    """
    c = np.asarray(cost, dtype=np.float64)
    n, m = c.shape
    if n > BRUTE_FORCE_MAX:
        raise ValueError(f"brute force limited to N <= {BRUTE_FORCE_MAX}, got {n}")
    if m > n:
        raise ValueError(f"more gt columns ({m}) than prediction rows ({n})")
    rows = c.tolist()
    best_perm = None
    best_total = math.inf
    for perm in permutations(range(n), m):
        total = math.fsum(rows[perm[j]][j] for j in range(m))
        if total < best_total:
            best_total = total
            best_perm = perm
    pairs = tuple((j, best_perm[j]) for j in range(m))
    return Assignment(pairs=pairs, total_cost=best_total)
