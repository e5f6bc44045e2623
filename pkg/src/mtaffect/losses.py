"""Per-task losses, supervised/consistency routing and the weighted total."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from . import autodiff as ad
from . import selfcure
from .model import AU_COUNT, TaskPredictions

logger = logging.getLogger(__name__)

PROB_EPS = 1e-12
TASKS = ("expr", "au", "va")
DEFAULT_WEIGHTS = (1.0, 0.3, 0.3)

SUPERVISED = "supervised"
CONSISTENCY = "consistency"
MIXED = "mixed"
SKIPPED = "skipped"


@dataclass
class LabelBatch:
    """Labels for a batch; absent entries are flagged in the ``has_*`` masks."""

    expr: np.ndarray  # (B,) int, -1 where absent
    au: np.ndarray  # (B, 12) float
    va: np.ndarray  # (B, 2) float
    has_expr: np.ndarray
    has_au: np.ndarray
    has_va: np.ndarray

    def __len__(self):
        return len(self.expr)

    def present(self, task: str) -> np.ndarray:
        return getattr(self, f"has_{task}")

    @classmethod
    def full(cls, expr, au, va) -> "LabelBatch":
        expr = np.asarray(expr, dtype=np.int64)
        b = len(expr)
        ones = np.ones(b, dtype=bool)
        return cls(expr, np.asarray(au, dtype=np.float64).reshape(b, AU_COUNT),
                   np.asarray(va, dtype=np.float64).reshape(b, 2), ones, ones.copy(), ones.copy())


@dataclass
class RoutedLoss:
    loss: Optional[ad.Node]
    flag: str
    n_supervised: int
    n_consistency: int

    @property
    def value(self) -> float:
        return 0.0 if self.loss is None else float(self.loss.value[0, 0])


@dataclass
class LossBreakdown:
    expr_loss: float
    au_loss: float
    va_loss: float
    total: float
    flags: Dict[str, str] = field(default_factory=dict)
    n_supervised: int = 0
    n_consistency: int = 0
    rr_loss: float = 0.0
    node: Optional[ad.Node] = None

    @property
    def supervised_fraction(self) -> float:
        n = self.n_supervised + self.n_consistency
        return self.n_supervised / n if n else 1.0


def _row_selector(tape: ad.Tape, rows: np.ndarray, n: int) -> ad.Node:
    sel = np.zeros((len(rows), n))
    sel[np.arange(len(rows)), rows] = 1.0
    return tape.const(sel)


# ------------------------------------------------------------------ losses

def cross_entropy(logits: ad.Node, targets, rows=None) -> ad.Node:
    """Mean over ``rows`` (default: all) of ``-log softmax(logits)[target]``."""
    b, c = logits.shape
    targets = np.asarray(targets, dtype=np.int64).ravel()
    rows = np.arange(b) if rows is None else np.asarray(rows, dtype=np.int64)
    if len(targets) != b:
        raise ValueError(f"cross_entropy: {len(targets)} targets for {b} rows")
    if len(rows) == 0:
        raise ValueError("cross_entropy: no rows to average over")
    t = targets[rows]
    if np.any((t < 0) | (t >= c)):
        raise ValueError(f"cross_entropy: target out of range [0, {c}): {t[(t < 0) | (t >= c)]}")
    pick = np.zeros((b, c))
    pick[rows, t] = -1.0 / len(rows)
    return ad.total(ad.mul(ad.log_softmax_row(logits), logits.tape.const(pick)))


def expr_loss(logits: ad.Node, targets, split: Optional[selfcure.RankSplit] = None,
              weights: Optional[ad.Node] = None, delta: float = selfcure.DEFAULT_DELTA,
              rows=None) -> ad.Node:
    """Cross entropy plus the rank-regularization hinge when a split is given."""
    ce = cross_entropy(logits, targets, rows)
    if split is None:
        return ce
    return ad.add(ce, selfcure.rr_loss(weights, split, delta))


def au_bce(probs: ad.Node, labels, rows=None) -> ad.Node:
    """Batch mean of the 12-unit summed binary cross entropy."""
    b, k = probs.shape
    y = np.asarray(labels, dtype=np.float64).reshape(b, k)
    rows = np.arange(b) if rows is None else np.asarray(rows, dtype=np.int64)
    if len(rows) == 0:
        raise ValueError("au_bce: no rows to average over")
    if np.any((probs.value < PROB_EPS) | (probs.value > 1.0 - PROB_EPS)):
        logger.debug("au_bce: clamping saturated probabilities")
    tape = probs.tape
    p = ad.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    one = tape.const(np.ones((b, k)))
    w_pos = np.zeros((b, k))
    w_neg = np.zeros((b, k))
    w_pos[rows] = -y[rows] / len(rows)
    w_neg[rows] = -(1.0 - y[rows]) / len(rows)
    pos = ad.mul(ad.log(p), tape.const(w_pos))
    neg = ad.mul(ad.log(ad.sub(one, p)), tape.const(w_neg))
    return ad.total(ad.add(pos, neg))


def ccc(pred, target) -> float:
    """Concordance correlation coefficient with population statistics."""
    x = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(target, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError(f"ccc: length mismatch {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("ccc needs at least 2 values")
    mx, my = x.mean(), y.mean()
    vx, vy = ((x - mx) ** 2).mean(), ((y - my) ** 2).mean()
    cov = ((x - mx) * (y - my)).mean()
    denom = vx + vy + (mx - my) ** 2
    if denom == 0.0:
        return 1.0  # both constant and equal
    return float(2.0 * cov / denom)


def ccc_node(pred: ad.Node, target: np.ndarray) -> ad.Node:
    """CCC between an Nx1 prediction column and fixed targets, on the tape."""
    n = pred.shape[0]
    tape = pred.tape
    y = np.asarray(target, dtype=np.float64).reshape(n, 1)
    my = y.mean()
    yc = tape.const(y - my)
    mx = ad.mean(pred)
    xc = ad.sub(pred, ad.broadcast_scalar(mx, n))
    vx = ad.mean(ad.square(xc))
    cov = ad.mean(ad.mul(xc, yc))
    gap = ad.sub(mx, tape.const([[my]]))
    denom = ad.add(ad.add(vx, tape.const([[((y - my) ** 2).mean()]])), ad.square(gap))
    if denom.value[0, 0] == 0.0:
        return tape.const([[1.0]])
    return ad.div(ad.scale(cov, 2.0), denom)


def va_loss(va_pred: ad.Node, va_target, rows=None, literal: bool = False) -> Optional[ad.Node]:
    """``1 - (CCC_V + CCC_A)/2`` over ``rows``; ``None`` when fewer than 2 rows.

    ``literal=True`` returns the bare ``(CCC_V + CCC_A)/2`` score instead.
    """
    b = va_pred.shape[0]
    t = np.asarray(va_target, dtype=np.float64).reshape(b, 2)
    rows = np.arange(b) if rows is None else np.asarray(rows, dtype=np.int64)
    if len(rows) < 2:
        logger.warning("va_loss: %d contributing samples, CCC undefined; skipping", len(rows))
        return None
    pred = va_pred
    if len(rows) != b or np.any(rows != np.arange(b)):
        pred = ad.matmul(_row_selector(va_pred.tape, rows, b), va_pred)
    cv = ccc_node(ad.column(pred, 0), t[rows, 0])
    ca = ccc_node(ad.column(pred, 1), t[rows, 1])
    score = ad.scale(ad.add(cv, ca), 0.5)
    if literal:
        return score
    return ad.sub(va_pred.tape.const([[1.0]]), score)


# ----------------------------------------------------------------- routing

def _merge_targets(task: str, labels: LabelBatch, pseudo: Optional[LabelBatch]):
    present = labels.present(task)
    gt = getattr(labels, task)
    if pseudo is None:
        return gt, np.flatnonzero(present), int(present.sum()), 0
    merged = gt.copy()
    missing = ~present
    merged[missing] = getattr(pseudo, task)[missing]
    return merged, np.arange(len(labels)), int(present.sum()), int(missing.sum())


def route_task_loss(task: str, student: TaskPredictions, labels: LabelBatch,
                    pseudo: Optional[LabelBatch] = None, *, supervised_only: bool = False,
                    split: Optional[selfcure.RankSplit] = None,
                    delta: float = selfcure.DEFAULT_DELTA,
                    literal_va: bool = False) -> RoutedLoss:
    """Ground truth where present, teacher hard labels where missing.

    With ``supervised_only`` the rows lacking a label simply drop out of
    the task's loss; otherwise ``pseudo`` must be supplied whenever any
    label is missing.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    present = labels.present(task)
    if supervised_only:
        pseudo = None
    elif pseudo is None and not present.all():
        raise ValueError(f"{task}: labels missing and no teacher predictions supplied")

    targets, rows, n_sup, n_con = _merge_targets(task, labels, pseudo)
    if n_con == 0:
        flag = SUPERVISED
    elif n_sup == 0:
        flag = CONSISTENCY
    else:
        flag = MIXED

    if task == "expr":
        if len(rows) == 0:
            return RoutedLoss(None, SKIPPED, 0, 0)
        loss = expr_loss(student.expr_logits, targets, split, student.importance, delta, rows)
    elif task == "au":
        if len(rows) == 0:
            return RoutedLoss(None, SKIPPED, 0, 0)
        loss = au_bce(student.au_probs, targets, rows)
    else:
        loss = va_loss(student.va, targets, rows, literal=literal_va)
        if loss is None:
            return RoutedLoss(None, SKIPPED, 0, 0)
    return RoutedLoss(loss, flag, n_sup, n_con)


def total_loss(routed: Dict[str, RoutedLoss], weights: Tuple[float, float, float] = DEFAULT_WEIGHTS,
               rr_value: float = 0.0) -> LossBreakdown:
    """Weighted sum of the routed task losses; skipped tasks contribute 0."""
    if any(w < 0 for w in weights):
        raise ValueError(f"loss weights must be non-negative, got {weights}")
    node = None
    for task, w in zip(TASKS, weights):
        r = routed.get(task)
        if r is None or r.loss is None:
            continue
        term = ad.scale(r.loss, w)
        node = term if node is None else ad.add(node, term)
    vals = [routed[t].value if t in routed else 0.0 for t in TASKS]
    total = float(sum(w * v for w, v in zip(weights, vals)))
    return LossBreakdown(
        expr_loss=vals[0], au_loss=vals[1], va_loss=vals[2], total=total,
        flags={t: (routed[t].flag if t in routed else SKIPPED) for t in TASKS},
        n_supervised=sum(r.n_supervised for r in routed.values()),
        n_consistency=sum(r.n_consistency for r in routed.values()),
        rr_loss=rr_value, node=node)


def combine(expr: float, au: float, va: float,
            weights: Tuple[float, float, float] = DEFAULT_WEIGHTS) -> float:
    w1, w2, w3 = weights
    if min(weights) < 0:
        raise ValueError(f"loss weights must be non-negative, got {weights}")
    return w1 * expr + w2 * au + w3 * va
