"""Bias-corrected Adam over named parameter blocks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .model import ModelParams

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    skipped: int = field(default=0)

    @classmethod
    def zeros_like(cls, params: ModelParams, **kw) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.blocks.items()},
                   {k: np.zeros_like(v) for k, v in params.blocks.items()}, **kw)


def adam_step(params: ModelParams, grads: Dict[str, np.ndarray], state: AdamState,
              lr: float) -> bool:
    """Update ``params`` and ``state`` in place. Returns False if the batch was skipped."""
    if list(grads) != params.names() or list(state.m) != params.names():
        raise ValueError("gradient / moment layout does not match the parameters")
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        logger.warning("non-finite gradient at step %d; batch skipped", state.step + 1)
        state.skipped += 1
        return False
    state.step += 1
    b1, b2, t = state.beta1, state.beta2, state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for k, g in grads.items():
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params.blocks[k] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return True
