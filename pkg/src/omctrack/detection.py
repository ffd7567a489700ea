"""Box decoding, IOU and greedy non-maximum suppression.

Boxes live on the feature grid: centers and sizes are measured in cells,
with the anchor of each prediction at its cell center (col + 0.5,
row + 0.5). Two offset decoders are provided: the legacy sigmoid decoder
confines centers to one cell, while the boundary-aware decoder (bar) can
reach offsets up to half its scale parameter, so truncated targets at the
image edge remain representable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .numerics import sigmoid

__all__ = [
    "Box",
    "BarParams",
    "decode_offset_sigmoid",
    "decode_offset_bar",
    "decode_boxes",
    "iou",
    "greedy_nms",
    "DEFAULT_SCORE_THR",
    "DEFAULT_IOU_THR",
]

DEFAULT_SCORE_THR = 0.5
DEFAULT_IOU_THR = 0.45


@dataclass
class Box:
    """Axis-aligned box in feature-map cells with a confidence score.

    The restored flag marks boxes recovered by detection fusion rather
    than produced by the detector itself.
    """

    cx: float
    cy: float
    w: float
    h: float
    score: float
    restored: bool = False

    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2) extent."""
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )


@dataclass
class BarParams:
    """Scale parameter of the boundary-aware offset decoder."""

    h_scale: float = 10.0

    def __post_init__(self):
        if not self.h_scale > 0:
            raise ValueError(f"h_scale must be positive, got {self.h_scale}")


def decode_offset_sigmoid(raw: tuple[float, float]) -> tuple[float, float]:
    """Legacy offset decode: sigmoid squashes each component into (0, 1)."""
    return (float(sigmoid(raw[0])), float(sigmoid(raw[1])))


def decode_offset_bar(raw: tuple[float, float], p: BarParams) -> tuple[float, float]:
    """Boundary-aware offset decode: (sigmoid(raw) - 0.5) * h_scale.

    Ranges over (-h_scale/2, h_scale/2) per axis and is exactly zero at
    raw = 0, so centers beyond a single cell stay representable.
    """
    return (
        (float(sigmoid(raw[0])) - 0.5) * p.h_scale,
        (float(sigmoid(raw[1])) - 0.5) * p.h_scale,
    )


def decode_boxes(
    prob: np.ndarray,
    raw: np.ndarray,
    mode: str = "bar",
    bar: BarParams | None = None,
) -> list[Box]:
    """Decode per-cell regressions into a grid-aligned box list.

    Parameters
    ----------
    prob : (H, W, 1) foreground probability map (box scores)
    raw : (H, W, 4) regression values (raw_dx, raw_dy, raw_logw, raw_logh)
    mode : "bar" or "sigmoid" offset decoding

    Returns one Box per cell in row-major order; widths and heights come
    from exponentiating the raw values so they stay positive. NaN anywhere
    in the maps rejects the frame.
    """
    prob = np.asarray(prob)
    raw = np.asarray(raw)
    if prob.ndim != 3 or prob.shape[2] != 1:
        raise ValueError(f"prob must have shape (H, W, 1), got {prob.shape}")
    if raw.ndim != 3 or raw.shape[2] != 4:
        raise ValueError(f"boxes must have shape (H, W, 4), got {raw.shape}")
    if prob.shape[:2] != raw.shape[:2]:
        raise ValueError(
            f"prob and boxes grids differ: {prob.shape[:2]} vs {raw.shape[:2]}"
        )
    if np.isnan(prob).any() or np.isnan(raw).any():
        raise ValueError("frame rejected: NaN in detection maps")
    if mode not in ("bar", "sigmoid"):
        raise ValueError(f"unknown decode mode {mode!r}")
    bar = bar or BarParams()

    height, width = prob.shape[:2]
    raw64 = raw.astype(np.float64)
    squashed = sigmoid(raw64[:, :, 0:2])
    if mode == "bar":
        offset = (squashed - 0.5) * bar.h_scale
    else:
        offset = squashed
    cols = np.arange(width, dtype=np.float64) + 0.5
    rows = np.arange(height, dtype=np.float64) + 0.5
    cx = cols[None, :] + offset[:, :, 0]
    cy = rows[:, None] + offset[:, :, 1]
    bw = np.exp(raw64[:, :, 2])
    bh = np.exp(raw64[:, :, 3])
    score = prob[:, :, 0].astype(np.float64)

    boxes = []
    for r in range(height):
        for c in range(width):
            boxes.append(
                Box(
                    cx=float(cx[r, c]),
                    cy=float(cy[r, c]),
                    w=float(bw[r, c]),
                    h=float(bh[r, c]),
                    score=float(score[r, c]),
                )
            )
    return boxes


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two axis-aligned boxes, in [0, 1]."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def greedy_nms(
    boxes: list[Box],
    score_thr: float = DEFAULT_SCORE_THR,
    iou_thr: float = DEFAULT_IOU_THR,
) -> list[Box]:
    """Threshold by score, then greedily keep maxima and drop overlaps.

    Boxes scoring below score_thr are discarded; the survivor set is built
    by repeatedly keeping the highest-scoring candidate and suppressing
    every remaining box whose IOU with it exceeds iou_thr. Ties in score
    resolve in input order. Output is score-descending.
    """
    candidates = [b for b in boxes if b.score >= score_thr]
    candidates.sort(key=lambda b: -b.score)
    kept: list[Box] = []
    while candidates:
        top = candidates.pop(0)
        kept.append(top)
        candidates = [b for b in candidates if iou(top, b) <= iou_thr]
    return kept


def rescored(box: Box, score: float) -> Box:
    """Copy of a box with its confidence replaced; geometry untouched."""
    return replace(box, score=score)
