"""Normalized 1D temporal interval algebra.

Spans live on the unit interval as fractions of the video duration. Two
parameterizations are used: (center, width) as produced by the span head,
and (start, end) for overlap computations and metrics. All functions here
are pure and thread-safe.

Degenerate-span convention: IoU and gIoU treat a zero-width operand via
interval lengths directly, so the intersection is 0 unless lengths are
positive; two identical zero-width spans therefore have IoU 0, and a
zero-length hull yields gIoU 0. This avoids 0/0 while keeping both scores
monotone in overlap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SpanCW:
    """Span as (center, width), both fractions of the video in [0, 1]."""

    center: float
    width: float

    def __post_init__(self):
        if not (0.0 <= self.center <= 1.0):
            raise ValueError(f"center must be in [0,1], got {self.center}")
        if not (0.0 <= self.width <= 1.0):
            raise ValueError(f"width must be in [0,1], got {self.width}")


@dataclass(frozen=True)
class SpanSE:
    """Span as (start, end); may transiently lie outside [0,1] before clamping."""

    start: float
    end: float

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"start {self.start} > end {self.end}")

    @property
    def length(self) -> float:
        return self.end - self.start


def cw_to_se(s: SpanCW) -> SpanSE:
    """Decode (center, width) to (start, end) = center -/+ width/2."""
    half = s.width / 2.0
    return SpanSE(s.center - half, s.center + half)


def se_to_cw(s: SpanSE) -> SpanCW:
    """Inverse of cw_to_se; exact for spans within the unit interval."""
    return SpanCW((s.start + s.end) / 2.0, s.end - s.start)


def clamp_unit(s: SpanSE) -> SpanSE:
    """Clamp both endpoints into [0, 1], preserving ordering.

    Applied only at decode/evaluation boundaries, never inside the loss.
    """
    return SpanSE(min(max(s.start, 0.0), 1.0), min(max(s.end, 0.0), 1.0))


def iou(a: SpanSE, b: SpanSE) -> float:
    """Intersection-over-union of two intervals; 0 when the union is empty."""
    inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    union = a.length + b.length - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def giou(a: SpanSE, b: SpanSE) -> float:
    """Generalized IoU: IoU minus the hull-excess term, in (-1, 1].

    gIoU = IoU - (|hull| - |union|) / |hull| with the hull being the
    smallest interval containing both spans. Equals IoU whenever the spans
    intersect or touch; 0 when the hull has zero length.
    """
    hull = max(a.end, b.end) - min(a.start, b.start)
    if hull <= 0.0:
        return 0.0
    inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    union = a.length + b.length - inter
    base = inter / union if union > 0.0 else 0.0
    return base - (hull - union) / hull


def seconds_to_norm(window: tuple[float, float], duration: float) -> SpanSE:
    """Map a (start, end) window in seconds to unit-interval fractions."""
    start, end = window
    if duration <= 0.0:
        raise ValueError(f"duration must be positive, got {duration}")
    if not (0.0 <= start <= end <= duration):
        raise ValueError(f"window ({start}, {end}) outside [0, {duration}]")
    return SpanSE(start / duration, end / duration)


def norm_to_seconds(s: SpanSE, duration: float) -> tuple[float, float]:
    """Inverse of seconds_to_norm."""
    if duration <= 0.0:
        raise ValueError(f"duration must be positive, got {duration}")
    return (s.start * duration, s.end * duration)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise interval IoU for (n, 2) and (m, 2) arrays of (start, end).

    Unit-agnostic (seconds or normalized give identical values).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    inter = np.maximum(
        0.0,
        np.minimum(a[:, None, 1], b[None, :, 1]) - np.maximum(a[:, None, 0], b[None, :, 0]),
    )
    union = (a[:, 1] - a[:, 0])[:, None] + (b[:, 1] - b[:, 0])[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)
    return out


def giou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise generalized IoU for (n, 2) and (m, 2) arrays of (start, end)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    inter = np.maximum(
        0.0,
        np.minimum(a[:, None, 1], b[None, :, 1]) - np.maximum(a[:, None, 0], b[None, :, 0]),
    )
    union = (a[:, 1] - a[:, 0])[:, None] + (b[:, 1] - b[:, 0])[None, :] - inter
    hull = np.maximum(a[:, None, 1], b[None, :, 1]) - np.minimum(a[:, None, 0], b[None, :, 0])
    base = np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)
    excess = np.where(hull > 0.0, (hull - union) / np.where(hull > 0.0, hull, 1.0), 0.0)
    return np.where(hull > 0.0, base - excess, 0.0)
