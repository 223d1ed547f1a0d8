"""Weighted binary cross-entropy for heavily imbalanced leg masks."""

from __future__ import annotations

import numpy as np

from .ops import flush_subnormals
from ..errors import InvalidArgumentError, ShapeError

EPS = 1e-7


def _check(pred, target, w):
    if pred.shape != target.shape:
        raise ShapeError(f"weighted_bce: incompatible shapes {pred.shape} and {target.shape}")
    if not w > 0:
        raise InvalidArgumentError(f"positive-class weight must be > 0, got {w}")


def weighted_bce(pred: np.ndarray, target: np.ndarray, w: float = 1.0) -> tuple[float, np.ndarray]:
    """``-mean(w*y*log p + (1-y)*log(1-p))`` on probabilities clamped to [EPS, 1-EPS].

    Returns the loss and its gradient with respect to ``pred``.
    """
    _check(pred, target, w)
    p = np.clip(pred, EPS, 1.0 - EPS)
    y = target
    loss = -np.mean(w * y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    inside = (pred >= EPS) & (pred <= 1.0 - EPS)
    grad = (-w * y / p + (1.0 - y) / (1.0 - p)) / p.size * inside
    return float(loss), grad


def weighted_bce_with_logits(logits: np.ndarray, target: np.ndarray,
                             w: float = 1.0) -> tuple[float, np.ndarray]:
    """Same loss evaluated from logits (no clamping), gradient w.r.t. the logits."""
    _check(logits, target, w)
    y = target
    # log(1 + exp(z)) computed stably
    softplus_pos = np.logaddexp(0.0, logits)
    softplus_neg = np.logaddexp(0.0, -logits)
    loss = np.mean(w * y * softplus_neg + (1.0 - y) * softplus_pos)
    p = np.exp(-softplus_neg)
    grad = (w * y * (p - 1.0) + (1.0 - y) * p) / logits.size
    return float(loss), flush_subnormals(grad)  # saturated logits leave subnormal gradients


def positive_weight(masks) -> float:
    """Background-to-leg pixel ratio over a collection of binary masks."""
    pos = 0
    total = 0
    for m in masks:
        m = np.asarray(m)
        pos += int(np.count_nonzero(m))
        total += m.size
    if pos == 0:
        raise InvalidArgumentError("no positive pixels; cannot derive a class weight")
    return (total - pos) / pos


def occupied_positive_weight(grids, masks) -> float:
    """Non-leg-to-leg ratio counted over occupied grid pixels only.

    Empty pixels are trivially background, so including them (as
    :func:`positive_weight` does) inflates the weight to the point where the
    network marks every return as a leg. Without any non-leg return there is
    nothing to balance and the weight is 1.
    """
    pos = 0
    neg = 0
    for g, m in zip(grids, masks):
        occ = np.asarray(g) > 0
        leg = np.asarray(m) > 0
        pos += int(np.count_nonzero(leg))
        neg += int(np.count_nonzero(occ & ~leg))
    if pos == 0:
        raise InvalidArgumentError("no leg pixels; cannot derive a class weight")
    return neg / pos if neg else 1.0
