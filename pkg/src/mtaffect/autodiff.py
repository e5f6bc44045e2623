"""Tape-based reverse-mode differentiation over dense float64 matrices.

Every value is a 2-D ``numpy`` array. A :class:`Tape` records the primitive
operations applied to :class:`Node` objects and replays them backwards to
accumulate gradients. Broadcasting is limited to the row-vector bias add;
anything else (scalar broadcast, column scaling) is expressed with constant
matmuls so that the primitive set stays small.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

FD_STEP = 1e-5


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to a primitive."""


def as_matrix(x) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    return arr


class Node:
    __slots__ = ("value", "grad", "tape", "index", "name", "is_param")

    def __init__(self, value: np.ndarray, tape: "Tape", index: int,
                 name: str = "", is_param: bool = False):
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.tape = tape
        self.index = index
        self.name = name
        self.is_param = is_param

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.name or self.index}, shape={self.shape})"


@dataclass
class _Record:
    op: str
    inputs: tuple
    output: Node
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    replay: Callable[..., np.ndarray]
    attrs: dict = field(default_factory=dict)


class Tape:
    """Ordered record of primitive operations.

    Parameters are registered with :meth:`param`; constants with
    :meth:`const`. Calling :meth:`backward` on a 1x1 node fills ``grad`` on
    every parameter node and returns them keyed by name.
    """

    def __init__(self):
        self.records: List[_Record] = []
        self.leaves: List[Node] = []
        self._count = 0

    def _new(self, value, name="", is_param=False) -> Node:
        node = Node(value, self, self._count, name=name, is_param=is_param)
        self._count += 1
        return node

    def param(self, value, name: str) -> Node:
        node = self._new(as_matrix(value), name=name, is_param=True)
        self.leaves.append(node)
        return node

    def const(self, value, name: str = "") -> Node:
        node = self._new(as_matrix(value), name=name)
        self.leaves.append(node)
        return node

    def _check(self, x: Node):
        if x.tape is not self:
            raise ValueError(f"{x!r} belongs to a different tape")

    def record(self, op: str, inputs: tuple, value: np.ndarray, backward, replay, **attrs) -> Node:
        for x in inputs:
            self._check(x)
        if not np.all(np.isfinite(value)):
            raise FloatingPointError(f"{op} produced non-finite values")
        out = self._new(value)
        self.records.append(_Record(op, inputs, out, backward, replay, attrs))
        return out

    def replay(self) -> List[np.ndarray]:
        """Recompute every recorded output from the leaf values, in order."""
        values: Dict[int, np.ndarray] = {leaf.index: leaf.value for leaf in self.leaves}
        outs = []
        for rec in self.records:
            args = [values[x.index] for x in rec.inputs]
            v = rec.replay(*args)
            values[rec.output.index] = v
            outs.append(v)
        return outs

    def backward(self, loss: Node) -> Dict[str, np.ndarray]:
        self._check(loss)
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        for leaf in self.leaves:
            leaf.grad = None
        for rec in self.records:
            rec.output.grad = None
        loss.grad = np.ones((1, 1))
        for rec in reversed(self.records):
            g = rec.output.grad
            if g is None:
                continue
            for x, gx in zip(rec.inputs, rec.backward(g)):
                if gx is None:
                    continue
                x.grad = gx if x.grad is None else x.grad + gx
            if rec.output is not loss:
                rec.output.grad = None  # release intermediate buffer
        grads = {}
        for leaf in self.leaves:
            if leaf.is_param:
                grads[leaf.name] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        return grads


# ---------------------------------------------------------------- primitives

def _same_shape(op, a: Node, b: Node):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Node, b: Node) -> Node:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return a.tape.record("matmul", (a, b), av @ bv,
                         lambda g: (g @ bv.T, av.T @ g),
                         lambda x, y: x @ y)


def add(a: Node, b: Node) -> Node:
    _same_shape("add", a, b)
    return a.tape.record("add", (a, b), a.value + b.value,
                         lambda g: (g, g), lambda x, y: x + y)


def sub(a: Node, b: Node) -> Node:
    _same_shape("sub", a, b)
    return a.tape.record("sub", (a, b), a.value - b.value,
                         lambda g: (g, -g), lambda x, y: x - y)


def add_row(a: Node, bias: Node) -> Node:
    """``a + bias`` with a 1xC bias broadcast over every row of ``a``."""
    if bias.shape != (1, a.shape[1]):
        raise ShapeError(f"add_row: bias shape {bias.shape} does not fit {a.shape}")
    return a.tape.record("add_row", (a, bias), a.value + bias.value,
                         lambda g: (g, g.sum(axis=0, keepdims=True)),
                         lambda x, y: x + y)


def mul(a: Node, b: Node) -> Node:
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return a.tape.record("mul", (a, b), av * bv,
                         lambda g: (g * bv, g * av), lambda x, y: x * y)


def div(a: Node, b: Node) -> Node:
    _same_shape("div", a, b)
    av, bv = a.value, b.value
    if np.any(bv == 0):
        raise ZeroDivisionError("div: zero in denominator")
    return a.tape.record("div", (a, b), av / bv,
                         lambda g: (g / bv, -g * av / (bv * bv)),
                         lambda x, y: x / y)


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return a.tape.record("scale", (a,), a.value * c,
                         lambda g: (g * c,), lambda x: x * c, c=c)


def relu(a: Node) -> Node:
    mask = a.value > 0
    return a.tape.record("relu", (a,), np.where(mask, a.value, 0.0),
                         lambda g: (g * mask,), lambda x: np.where(x > 0, x, 0.0))


def tanh(a: Node) -> Node:
    y = np.tanh(a.value)
    return a.tape.record("tanh", (a,), y, lambda g: (g * (1.0 - y * y),), np.tanh)


def _sigmoid(x):
    # split branches so neither exp overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Node) -> Node:
    y = _sigmoid(a.value)
    return a.tape.record("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),), _sigmoid)


def _softmax_rows(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax_rows(x):
    z = x - x.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_row(a: Node) -> Node:
    y = _softmax_rows(a.value)

    def back(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return a.tape.record("softmax_row", (a,), y, back, _softmax_rows)


def log_softmax_row(a: Node) -> Node:
    y = _log_softmax_rows(a.value)
    p = np.exp(y)
    return a.tape.record("log_softmax_row", (a,), y,
                         lambda g: (g - p * g.sum(axis=1, keepdims=True),),
                         _log_softmax_rows)


def log(a: Node) -> Node:
    if np.any(a.value <= 0):
        raise FloatingPointError("log: non-positive input")
    av = a.value
    return a.tape.record("log", (a,), np.log(av), lambda g: (g / av,), np.log)


def clip(a: Node, lo: float, hi: float) -> Node:
    """Clamp entries to ``[lo, hi]``; gradient passes only where unclamped."""
    inside = (a.value >= lo) & (a.value <= hi)
    return a.tape.record("clip", (a,), np.clip(a.value, lo, hi),
                         lambda g: (g * inside,), lambda x: np.clip(x, lo, hi),
                         lo=lo, hi=hi)


def total(a: Node) -> Node:
    """Sum of all entries, as a 1x1 node."""
    shape = a.shape
    return a.tape.record("sum", (a,), np.array([[a.value.sum()]]),
                         lambda g: (np.full(shape, g[0, 0]),),
                         lambda x: np.array([[x.sum()]]))


def mean(a: Node) -> Node:
    return scale(total(a), 1.0 / a.value.size)


def square(a: Node) -> Node:
    return mul(a, a)


def const_like(a: Node, value: float) -> Node:
    return a.tape.const(np.full(a.shape, float(value)))


def broadcast_scalar(s: Node, rows: int, cols: int = 1) -> Node:
    """Tile a 1x1 node to ``rows x cols`` via ``ones @ s @ ones``."""
    if s.shape != (1, 1):
        raise ShapeError(f"broadcast_scalar: expected 1x1, got {s.shape}")
    out = matmul(s.tape.const(np.ones((rows, 1))), s)
    if cols != 1:
        out = matmul(out, s.tape.const(np.ones((1, cols))))
    return out


def column(a: Node, j: int) -> Node:
    sel = np.zeros((a.shape[1], 1))
    sel[j, 0] = 1.0
    return matmul(a, a.tape.const(sel))


def scale_rows(a: Node, w: Node) -> Node:
    """Multiply row ``i`` of ``a`` by ``w[i]`` for a Bx1 column ``w``."""
    if w.shape != (a.shape[0], 1):
        raise ShapeError(f"scale_rows: weights {w.shape} do not fit {a.shape}")
    tiled = matmul(w, a.tape.const(np.ones((1, a.shape[1]))))
    return mul(a, tiled)


# --------------------------------------------------------------- grad check

@dataclass
class BlockReport:
    name: str
    max_rel_error: float
    passed: bool
    message: str = ""


@dataclass
class GradCheckReport:
    blocks: List[BlockReport]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.blocks)

    def __str__(self):
        lines = []
        for b in self.blocks:
            tag = "PASS" if b.passed else "FAIL"
            extra = f"  ({b.message})" if b.message else ""
            lines.append(f"{tag} {b.name:<16} max_rel_err={b.max_rel_error:.3e}{extra}")
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(f: Callable[[Tape, Dict[str, Node]], Node], params: Dict[str, np.ndarray],
               tolerance: float = 1e-4, step: float = FD_STEP,
               analytic_override: Optional[Dict[str, np.ndarray]] = None) -> GradCheckReport:
    """Compare tape gradients of ``f`` with central finite differences.

    ``f(tape, nodes)`` must build a scalar loss from the parameter nodes.
    ``analytic_override`` replaces selected analytic blocks, which is how the
    fault-injection test feeds in a corrupted gradient.
    """

    def evaluate(values):
        tape = Tape()
        nodes = {k: tape.param(v, k) for k, v in values.items()}
        return tape, f(tape, nodes)

    values = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape, loss = evaluate(values)
    analytic = tape.backward(loss)
    if analytic_override:
        analytic.update(analytic_override)

    blocks = []
    for name, base in values.items():
        a = analytic[name]
        if not np.all(np.isfinite(a)):
            blocks.append(BlockReport(name, float("inf"), False, "non-finite analytic gradient"))
            continue
        numeric = np.zeros_like(base)
        bad = False
        for idx in np.ndindex(base.shape):
            orig = base[idx]
            base[idx] = orig + step
            lp = evaluate(values)[1].value[0, 0]
            base[idx] = orig - step
            lm = evaluate(values)[1].value[0, 0]
            base[idx] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                bad = True
                break
            numeric[idx] = (lp - lm) / (2 * step)
        if bad:
            blocks.append(BlockReport(name, float("inf"), False, "non-finite loss under perturbation"))
            continue
        err = relative_error(a, numeric)
        blocks.append(BlockReport(name, err, err < tolerance))
    return GradCheckReport(blocks, tolerance)
