"""Challenge metrics: CCC, macro F1, accuracy and the three composite scores."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np

from .losses import ccc

EXPR_F1_WEIGHT = 0.67
EXPR_ACC_WEIGHT = 0.33


def _binary_f1(pred: np.ndarray, true: np.ndarray) -> Optional[float]:
    """F1 of the positive class, or None when it is neither predicted nor present."""
    tp = int(np.sum(pred & true))
    fp = int(np.sum(pred & ~true))
    fn = int(np.sum(~pred & true))
    if tp + fp + fn == 0:
        return None
    return 2.0 * tp / (2 * tp + fp + fn)


def expr_metrics(pred, true, n_classes: int) -> Tuple[float, float]:
    """Macro F1 and accuracy for single-label classification."""
    pred = np.asarray(pred).ravel()
    true = np.asarray(true).ravel()
    if pred.size == 0 or pred.size != true.size:
        raise ValueError(f"expr_metrics needs equal non-empty inputs, got {pred.size} and {true.size}")
    acc = float(np.mean(pred == true))
    scores = [_binary_f1(pred == c, true == c) for c in range(n_classes)]
    scores = [s for s in scores if s is not None]
    return float(np.mean(scores)), acc


def au_metrics(pred, true, exact_match: bool = False) -> Tuple[float, float]:
    """Macro F1 over units and bitwise accuracy (or per-sample exact match)."""
    pred = np.asarray(pred).astype(bool)
    true = np.asarray(true).astype(bool)
    if pred.size == 0 or pred.shape != true.shape:
        raise ValueError(f"au_metrics needs equal non-empty inputs, got {pred.shape} and {true.shape}")
    scores = [_binary_f1(pred[:, k], true[:, k]) for k in range(pred.shape[1])]
    scores = [s for s in scores if s is not None]
    f1 = float(np.mean(scores)) if scores else 1.0
    if exact_match:
        acc = float(np.mean(np.all(pred == true, axis=1)))
    else:
        acc = float(np.mean(pred == true))
    return f1, acc


def m_expr(f1: float, acc: float) -> float:
    return EXPR_F1_WEIGHT * f1 + EXPR_ACC_WEIGHT * acc


def m_va(ccc_v: float, ccc_a: float) -> float:
    return 0.5 * (ccc_v + ccc_a)


def m_au(f1: float, acc: float) -> float:
    return 0.5 * (f1 + acc)


@dataclass
class MetricsReport:
    ccc_v: Optional[float] = None
    ccc_a: Optional[float] = None
    f1_expr: Optional[float] = None
    acc_expr: Optional[float] = None
    f1_au: Optional[float] = None
    acc_au: Optional[float] = None
    m_va: Optional[float] = None
    m_expr: Optional[float] = None
    m_au: Optional[float] = None
    n_expr: int = 0
    n_au: int = 0
    n_va: int = 0

    CSV_FIELDS = ("ccc_v", "ccc_a", "f1_expr", "acc_expr", "f1_au", "acc_au",
                  "m_va", "m_expr", "m_au", "n_expr", "n_au", "n_va")

    def as_row(self) -> dict:
        return {k: ("" if v is None else v) for k, v in asdict(self).items()}

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, lineterminator="\n")
        if header:
            w.writeheader()
        w.writerow(self.as_row())
        return buf.getvalue()

    def pretty(self) -> str:
        def f(v):
            return "  n/a" if v is None else f"{v:.4f}"
        return (f"Expr  F1={f(self.f1_expr)} Acc={f(self.acc_expr)} M={f(self.m_expr)}  (n={self.n_expr})\n"
                f"AU    F1={f(self.f1_au)} Acc={f(self.acc_au)} M={f(self.m_au)}  (n={self.n_au})\n"
                f"VA    CCC_V={f(self.ccc_v)} CCC_A={f(self.ccc_a)} M={f(self.m_va)}  (n={self.n_va})")


def composite_scores(ccc_v=None, ccc_a=None, f1_expr=None, acc_expr=None,
                     f1_au=None, acc_au=None, n_expr=0, n_au=0, n_va=0) -> MetricsReport:
    """Fill in the composites for whichever task components are present."""
    return MetricsReport(
        ccc_v=ccc_v, ccc_a=ccc_a, f1_expr=f1_expr, acc_expr=acc_expr, f1_au=f1_au, acc_au=acc_au,
        m_va=m_va(ccc_v, ccc_a) if ccc_v is not None and ccc_a is not None else None,
        m_expr=m_expr(f1_expr, acc_expr) if f1_expr is not None and acc_expr is not None else None,
        m_au=m_au(f1_au, acc_au) if f1_au is not None and acc_au is not None else None,
        n_expr=n_expr, n_au=n_au, n_va=n_va)


def score_predictions(expr_logits, au_probs, va, labels, n_classes: int,
                      au_exact_match: bool = False) -> MetricsReport:
    """Metrics over the samples that carry ground truth for each task."""
    parts = {}
    rows = np.flatnonzero(labels.has_expr)
    if len(rows):
        parts["f1_expr"], parts["acc_expr"] = expr_metrics(
            np.argmax(expr_logits[rows], axis=1), labels.expr[rows], n_classes)
    rows_au = np.flatnonzero(labels.has_au)
    if len(rows_au):
        parts["f1_au"], parts["acc_au"] = au_metrics(
            au_probs[rows_au] >= 0.5, labels.au[rows_au] > 0.5, exact_match=au_exact_match)
    rows_va = np.flatnonzero(labels.has_va)
    if len(rows_va) >= 2:
        parts["ccc_v"] = ccc(va[rows_va, 0], labels.va[rows_va, 0])
        parts["ccc_a"] = ccc(va[rows_va, 1], labels.va[rows_va, 1])
    return composite_scores(n_expr=len(rows), n_au=len(rows_au), n_va=len(rows_va), **parts)


