"""Grounding metrics: box IoU, mask IoU, mIoU and precision at an IoU threshold."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from ..geometry import BBox2D


def iou(a: BBox2D, b: BBox2D) -> float:
    """Area IoU of two boxes with continuous extents; 0.0 when disjoint."""
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return float(inter / (a.w * a.h + b.w * b.h - inter))


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """``|a & b| / |a | b|``; two empty masks score 1.0."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


def miou(pairs: Iterable[tuple[np.ndarray, np.ndarray]]) -> float:
    vals = [mask_iou(p, g) for p, g in pairs]
    if not vals:
        raise ValueError("miou of an empty set")
    return float(np.mean(vals))


def prec_at(preds: Sequence[BBox2D], gts: Sequence[BBox2D], threshold: float = 0.5) -> float:
    """Fraction of pairs whose IoU is strictly above ``threshold``."""
    if len(preds) != len(gts):
        raise ValueError("prediction and ground-truth lists differ in length")
    if not preds:
        raise ValueError("prec_at of an empty set")
    return sum(iou(p, g) > threshold for p, g in zip(preds, gts)) / len(preds)
