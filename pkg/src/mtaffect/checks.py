"""Finite-difference verification of the model and every loss term."""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

from . import autodiff as ad
from . import losses, selfcure
from .losses import LabelBatch
from .model import AU_COUNT, ModelConfig, forward_nodes, init_model

TOLERANCE = 1e-4


def random_batch(rng: np.random.Generator, b: int, cfg: ModelConfig, missing: bool = True):
    x = rng.uniform(-2, 2, size=(b, cfg.input_dim))
    labels = LabelBatch.full(rng.integers(0, cfg.expr_classes, b),
                             rng.integers(0, 2, (b, AU_COUNT)),
                             rng.uniform(-1, 1, (b, 2)))
    if missing:
        labels.has_expr[::3] = False
        labels.has_au[1::3] = False
        labels.has_va[2::4] = False
    return x, labels


def model_total_loss_fn(cfg: ModelConfig, x, labels: LabelBatch, pseudo: LabelBatch,
                        split: selfcure.RankSplit, weights=losses.DEFAULT_WEIGHTS):
    """Tape builder for the routed three-task total loss, split held fixed."""

    def f(tape, nodes):
        preds = forward_nodes(nodes, cfg, tape.const(x), use_selfcure=True)
        routed = {t: losses.route_task_loss(t, preds, labels, pseudo,
                                            split=split if t == "expr" else None)
                  for t in losses.TASKS}
        return losses.total_loss(routed, weights).node

    return f


def full_model_check(seed: int = 0, batch: int = 8, hidden=(64, 64), input_dim: int = 16,
                     tolerance: float = TOLERANCE) -> ad.GradCheckReport:
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(input_dim=input_dim, hidden_dims=list(hidden), seed=seed)
    params = init_model(cfg)
    # nonzero biases so no block sits at a trivial point
    for k, v in params.blocks.items():
        if k.endswith(".b"):
            v += rng.uniform(-0.1, 0.1, v.shape)
    x, labels = random_batch(rng, batch, cfg)
    pseudo = LabelBatch.full(rng.integers(0, cfg.expr_classes, batch),
                             rng.integers(0, 2, (batch, AU_COUNT)),
                             rng.uniform(-1, 1, (batch, 2)))
    tape = ad.Tape()
    nodes = {k: tape.const(v) for k, v in params.blocks.items()}
    w = forward_nodes(nodes, cfg, tape.const(x)).importance.value
    split = selfcure.split_high_low(w)
    f = model_total_loss_fn(cfg, x, labels, pseudo, split)
    return ad.grad_check(f, params.blocks, tolerance)


def _single(name, fn, params, tolerance):
    return name, ad.grad_check(fn, params, tolerance)


def loss_checks(seed: int = 1, tolerance: float = TOLERANCE) -> List[Tuple[str, ad.GradCheckReport]]:
    rng = np.random.default_rng(seed)
    b, c = 6, 7
    targets = rng.integers(0, c, b)
    au_y = rng.integers(0, 2, (b, AU_COUNT))
    va_y = rng.uniform(-1, 1, (b, 2))
    w = rng.uniform(0.2, 0.8, (b, 1))
    split = selfcure.split_high_low(w)
    out = [
        _single("cross_entropy", lambda t, p: losses.cross_entropy(p["z"], targets),
                {"z": rng.uniform(-2, 2, (b, c))}, tolerance),
        _single("au_bce", lambda t, p: losses.au_bce(ad.sigmoid(p["z"]), au_y),
                {"z": rng.uniform(-2, 2, (b, AU_COUNT))}, tolerance),
        _single("va_loss", lambda t, p: losses.va_loss(ad.tanh(p["z"]), va_y),
                {"z": rng.uniform(-2, 2, (b, 2))}, tolerance),
        _single("rr_loss", lambda t, p: selfcure.rr_loss(p["w"], split, 0.6),
                {"w": w}, tolerance),
        _single("expr_loss", lambda t, p: losses.expr_loss(
            selfcure.apply_weighting(p["z"], p["w"]), targets, split, p["w"], 0.6),
            {"z": rng.uniform(-2, 2, (b, c)), "w": w}, tolerance),
    ]
    return out


def run_all(tolerance: float = TOLERANCE) -> List[Tuple[str, ad.GradCheckReport]]:
    results = loss_checks(tolerance=tolerance)
    results.append(("full_model_total_loss", full_model_check(tolerance=tolerance)))
    return results
