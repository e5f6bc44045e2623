"""EMA teacher: parameter averaging, input perturbation and hard pseudo-labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import LabelBatch
from .model import ModelParams, PredictionArrays, clone_params

DEFAULT_ETA = 0.99
AU_THRESHOLD = 0.5

ADDITIVE = "additive-gaussian"
MULTIPLICATIVE = "multiplicative-scale"


@dataclass
class TeacherState:
    params: ModelParams
    eta: float = DEFAULT_ETA
    step: int = 0

    def __post_init__(self):
        if not 0.0 <= self.eta < 1.0:
            raise ValueError(f"eta must lie in [0, 1), got {self.eta}")

    @classmethod
    def from_student(cls, student: ModelParams, eta: float = DEFAULT_ETA) -> "TeacherState":
        return cls(clone_params(student), eta, 0)


@dataclass
class NoiseConfig:
    kind: str = MULTIPLICATIVE
    magnitude: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (ADDITIVE, MULTIPLICATIVE):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.magnitude < 0:
            raise ValueError(f"noise magnitude must be >= 0, got {self.magnitude}")


def ema_update(teacher: TeacherState, student: ModelParams) -> TeacherState:
    """``p_teacher <- eta * p_teacher + (1 - eta) * p_student`` for every block."""
    if not teacher.params.same_layout(student):
        raise ValueError("teacher and student parameter layouts differ")
    eta = teacher.eta
    blocks = {k: eta * v + (1.0 - eta) * student.blocks[k]
              for k, v in teacher.params.blocks.items()}
    return TeacherState(ModelParams(teacher.params.config, blocks), eta, teacher.step + 1)


def perturb(features, cfg: NoiseConfig, rng: np.random.Generator) -> np.ndarray:
    """Feature-space stand-in for random brightness jitter.

    Multiplicative noise scales each row by one factor drawn from
    ``U(1 - m, 1 + m)``; additive noise adds ``N(0, m^2)`` per element.
    """
    x = np.asarray(features, dtype=np.float64)
    if cfg.magnitude == 0:
        return x.copy()
    if cfg.kind == MULTIPLICATIVE:
        u = rng.uniform(-cfg.magnitude, cfg.magnitude, size=(x.shape[0], 1))
        return x * (1.0 + u)
    return x + rng.normal(0.0, cfg.magnitude, size=x.shape)


def make_pseudo_labels(preds: PredictionArrays) -> LabelBatch:
    """Argmax classes, AU bits at the 0.5 cut, VA passed through unchanged."""
    expr = np.argmax(preds.expr_logits, axis=1)  # first maximum wins ties
    au = (preds.au_probs >= AU_THRESHOLD).astype(np.float64)
    return LabelBatch.full(expr, au, preds.va.copy())
