"""Self-attention importance weighting and rank regularization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

DEFAULT_DELTA = 0.15
DEFAULT_BETA = 0.7


@dataclass(frozen=True)
class RankSplit:
    high_indices: np.ndarray
    low_indices: np.ndarray
    alpha_high: float
    alpha_low: float

    @property
    def size(self) -> int:
        return len(self.high_indices) + len(self.low_indices)


def importance_weights(features: ad.Node, weight: ad.Node, bias: ad.Node) -> ad.Node:
    """One sigmoid score per row of ``features`` (Bx1)."""
    return ad.sigmoid(ad.add_row(ad.matmul(features, weight), bias))


def apply_weighting(expr_logits: ad.Node, weights: ad.Node) -> ad.Node:
    if weights.shape[0] != expr_logits.shape[0]:
        raise ad.ShapeError(
            f"apply_weighting: {weights.shape[0]} weights for {expr_logits.shape[0]} rows")
    return ad.scale_rows(expr_logits, weights)


def split_high_low(weights, beta: float = DEFAULT_BETA) -> RankSplit:
    """Sort weights descending and cut the top ``ceil(beta * B)`` off as the high group.

    Ties keep their original order, so the split is deterministic.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    n = w.size
    if n < 2:
        raise ValueError(f"split_high_low needs at least 2 weights, got {n}")
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    n_high = min(max(math.ceil(beta * n), 1), n - 1)
    order = np.argsort(-w, kind="stable")
    high, low = order[:n_high], order[n_high:]
    return RankSplit(high, low, float(w[high].mean()), float(w[low].mean()))


def rr_loss_value(split: RankSplit, delta: float = DEFAULT_DELTA) -> float:
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return max(0.0, delta - (split.alpha_high - split.alpha_low))


def rr_loss(weights: ad.Node, split: RankSplit, delta: float = DEFAULT_DELTA) -> ad.Node:
    """Hinge ``max(0, delta - (mean_high - mean_low))`` on the tape.

    ``weights`` is the Bx1 importance column the split was computed from;
    gradients reach it through the two group means.
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    n = weights.shape[0]
    if n != split.size:
        raise ad.ShapeError(f"rr_loss: split covers {split.size} rows, weights have {n}")
    sel = np.zeros((1, n))
    sel[0, split.high_indices] = 1.0 / len(split.high_indices)
    sel[0, split.low_indices] = -1.0 / len(split.low_indices)
    gap = ad.matmul(weights.tape.const(sel), weights)
    margin = ad.sub(weights.tape.const([[delta]]), gap)
    return ad.relu(margin)
