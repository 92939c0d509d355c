"""Overlap and boundary metrics on integer label masks.

Conventions, fixed here and relied on by the trainer:
  dice   both masks empty -> 1.0 (perfect agreement on absence)
  hausdorff  both empty -> 0.0; exactly one empty -> the image diagonal
             sqrt((H-1)^2 + (W-1)^2), the largest possible distance.
Hausdorff is the exact symmetric max-min over all foreground pixel pairs,
computed by exhaustive scan; fine at desk scale, do not point it at
megapixel masks.
"""
from __future__ import annotations

import numpy as np

from ..tensor import ShapeError


def dice_score(pred: np.ndarray, target: np.ndarray, label: int) -> float:
    if pred.shape != target.shape:
        raise ShapeError(f"dice: shape mismatch {pred.shape} vs {target.shape}")
    a = pred == label
    b = target == label
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 and nb == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / (na + nb)


def mean_dice(pred: np.ndarray, target: np.ndarray, classes: int) -> float:
    """Mean Dice over foreground labels 1..classes."""
    return float(np.mean([dice_score(pred, target, c) for c in range(1, classes + 1)]))


def _directed_sq(src: np.ndarray, dst: np.ndarray) -> float:
    d2 = ((src[:, None, :] - dst[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).max())


def hausdorff(pred: np.ndarray, target: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two boolean foreground masks."""
    if pred.shape != target.shape:
        raise ShapeError(f"hausdorff: shape mismatch {pred.shape} vs {target.shape}")
    a = np.argwhere(pred)
    b = np.argwhere(target)
    if a.size == 0 and b.size == 0:
        return 0.0
    if a.size == 0 or b.size == 0:
        h, w = pred.shape
        return float(np.hypot(h - 1, w - 1))
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    return float(np.sqrt(max(_directed_sq(a, b), _directed_sq(b, a))))


def mean_hausdorff(pred: np.ndarray, target: np.ndarray, classes: int) -> float:
    """Mean per-class Hausdorff over foreground labels 1..classes."""
    return float(np.mean([hausdorff(pred == c, target == c)
                          for c in range(1, classes + 1)]))
