"""Synthetic correlated multi-task data, group-level missingness and splitting.

All three label sets are derived from one latent vector per sample, so the
tasks are mutually informative. Groups play the role of videos: missingness
masks and the train/val split are both decided per group.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .losses import LabelBatch
from .model import AU_COUNT

logger = logging.getLogger(__name__)


class DataFormatError(ValueError):
    """A JSONL record does not match the dataset schema."""


@dataclass(frozen=True)
class TaskLabels:
    expr: Optional[int] = None
    au: Optional[Tuple[int, ...]] = None
    va: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.au is not None and len(self.au) != AU_COUNT:
            raise ValueError(f"au must have {AU_COUNT} entries, got {len(self.au)}")
        if self.va is not None:
            if len(self.va) != 2:
                raise ValueError(f"va must have 2 entries, got {len(self.va)}")
            if any(not -1.0 <= v <= 1.0 for v in self.va):
                raise ValueError(f"va out of [-1, 1]: {self.va}")

    @property
    def mask(self) -> Tuple[bool, bool, bool]:
        return (self.expr is not None, self.au is not None, self.va is not None)

    def any(self) -> bool:
        return any(self.mask)


@dataclass(frozen=True)
class Sample:
    id: int
    features: np.ndarray
    labels: TaskLabels
    group_id: int

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (self.id == other.id and self.group_id == other.group_id
                and self.labels == other.labels
                and np.array_equal(self.features, other.features))


@dataclass
class MissingPattern:
    fully_labeled_fraction: float = 0.33
    presence: Tuple[float, float, float] = (0.5, 0.5, 0.5)

    def validate(self):
        if not 0.0 <= self.fully_labeled_fraction <= 1.0:
            raise ValueError(f"fully_labeled_fraction must be in [0, 1], got {self.fully_labeled_fraction}")
        if len(self.presence) != 3 or any(not 0.0 <= p <= 1.0 for p in self.presence):
            raise ValueError(f"presence must be three probabilities, got {self.presence}")
        if self.fully_labeled_fraction < 1.0 and _partial_mask_probs(self.presence).sum() == 0.0:
            raise ValueError(
                f"presence {tuple(self.presence)} can never yield a one- or two-task mask; "
                "partially labeled groups would be orphaned")
        return self


@dataclass
class DataGenConfig:
    n_groups: int = 200
    group_size: int = 25
    input_dim: int = 16
    latent_dim: int = 8
    expr_classes: int = 7
    noise_std: float = 0.5
    missing: MissingPattern = field(default_factory=MissingPattern)
    seed: int = 0

    @property
    def n_samples(self) -> int:
        return self.n_groups * self.group_size

    def validate(self):
        if self.latent_dim < 2:
            raise ValueError(f"latent_dim must be >= 2, got {self.latent_dim}")
        if self.n_groups < 1 or self.group_size < 1 or self.input_dim < 1:
            raise ValueError("n_groups, group_size and input_dim must be positive")
        if self.expr_classes < 2:
            raise ValueError("expr_classes must be >= 2")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        self.missing.validate()
        return self


# -------------------------------------------------------------- generation

_PARTIAL_MASKS = [m for m in itertools.product([True, False], repeat=3) if 1 <= sum(m) <= 2]


def _partial_mask_probs(presence) -> np.ndarray:
    """Probability of each one- or two-task mask under independent presence."""
    probs = []
    for m in _PARTIAL_MASKS:
        p = 1.0
        for keep, q in zip(m, presence):
            p *= q if keep else 1.0 - q
        probs.append(p)
    return np.array(probs)


def generate_dataset(cfg: DataGenConfig) -> List[Sample]:
    """Fully labeled samples; call :func:`apply_missingness` afterwards."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    L, C = cfg.latent_dim, cfg.expr_classes

    prototypes = rng.normal(size=(C, L))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)
    va_map = rng.normal(size=(L, 2))
    va_map /= np.linalg.norm(va_map, axis=0, keepdims=True)
    # each AU leans on one expression prototype so AU bits carry class information
    anchor = np.arange(AU_COUNT) % C
    au_dirs = 0.8 * prototypes[anchor] + 0.6 * rng.normal(size=(AU_COUNT, L)) / np.sqrt(L)
    au_dirs /= np.linalg.norm(au_dirs, axis=1, keepdims=True)
    au_bias = rng.uniform(-0.8, 0.2, size=AU_COUNT)
    embed = rng.normal(size=(L, cfg.input_dim)) / np.sqrt(L)

    n = cfg.n_samples
    z = rng.normal(size=(n, L))
    expr = np.argmax(z @ prototypes.T, axis=1)
    va = np.clip(0.5 * (z @ va_map), -1.0, 1.0)
    au = (z @ au_dirs.T + au_bias > 0).astype(int)
    x = z @ embed + rng.normal(0.0, cfg.noise_std, size=(n, cfg.input_dim))

    samples = []
    for i in range(n):
        labels = TaskLabels(int(expr[i]), tuple(int(b) for b in au[i]),
                            (float(va[i, 0]), float(va[i, 1])))
        samples.append(Sample(i, x[i].copy(), labels, i // cfg.group_size))
    return samples


def group_ids(samples: Sequence[Sample]) -> List[int]:
    return sorted({s.group_id for s in samples})


def apply_missingness(samples: Sequence[Sample], pattern: MissingPattern, seed: int = 0) -> List[Sample]:
    """Drop task labels per group.

    ``round(fraction * n_groups)`` groups stay fully labeled; every other
    group draws a one- or two-task mask from the presence probabilities
    (conditioned on keeping at least one and at most two tasks) that all
    its samples share.
    """
    pattern.validate()
    rng = np.random.default_rng(seed)
    groups = group_ids(samples)
    n_full = int(round(pattern.fully_labeled_fraction * len(groups)))
    order = rng.permutation(len(groups))
    full = {groups[i] for i in order[:n_full]}
    probs = _partial_mask_probs(pattern.presence)
    masks = {}
    for g in groups:
        if g in full:
            masks[g] = (True, True, True)
        else:
            masks[g] = _PARTIAL_MASKS[rng.choice(len(_PARTIAL_MASKS), p=probs / probs.sum())]
    out = []
    for s in samples:
        keep = masks[s.group_id]
        lab = s.labels
        new = TaskLabels(lab.expr if keep[0] else None, lab.au if keep[1] else None,
                         lab.va if keep[2] else None)
        if not new.any():
            raise ValueError(f"sample {s.id} would lose every label")
        out.append(replace(s, labels=new))
    return out


def inject_expr_noise(samples: Sequence[Sample], rate: float, n_classes: int,
                      seed: int = 0) -> List[Sample]:
    """Symmetric label noise: flip a ``rate`` fraction of expression labels to another class."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"noise rate must be in [0, 1], got {rate}")
    rng = np.random.default_rng(seed)
    out = []
    for s in samples:
        e = s.labels.expr
        if e is not None and rng.random() < rate:
            e = int((e + rng.integers(1, n_classes)) % n_classes)
            s = replace(s, labels=replace(s.labels, expr=e))
        out.append(s)
    return out


def split_train_val(samples: Sequence[Sample], ratio: float = 0.8,
                    seed: int = 0) -> Tuple[List[Sample], List[Sample]]:
    """Group-level split, stratified by each group's label mask.

    Stratifying keeps every task's labeled share close to ``ratio`` on both
    sides; whole groups go to one side only.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    groups = group_ids(samples)
    n_train = int(round(ratio * len(groups)))
    if n_train == 0 or n_train == len(groups):
        raise ValueError(f"{len(groups)} groups cannot be split at ratio {ratio}")

    mask_of = {}
    for s in samples:
        mask_of.setdefault(s.group_id, s.labels.mask)
    strata = {}
    for g in groups:
        strata.setdefault(mask_of[g], []).append(g)
    keys = sorted(strata)

    # largest-remainder allocation so the stratum quotas add up to n_train
    quotas = {k: ratio * len(strata[k]) for k in keys}
    alloc = {k: int(np.floor(q)) for k, q in quotas.items()}
    short = n_train - sum(alloc.values())
    for k in sorted(keys, key=lambda k: (-(quotas[k] - alloc[k]), keys.index(k)))[:short]:
        alloc[k] += 1

    rng = np.random.default_rng(seed)
    train_groups = set()
    for k in keys:
        members = strata[k]
        picked = rng.permutation(len(members))[:alloc[k]]
        train_groups.update(members[i] for i in picked)
    train = [s for s in samples if s.group_id in train_groups]
    val = [s for s in samples if s.group_id not in train_groups]
    return train, val


# ------------------------------------------------------------- batching

def to_arrays(samples: Sequence[Sample]) -> Tuple[np.ndarray, LabelBatch]:
    b = len(samples)
    x = np.stack([s.features for s in samples]) if b else np.zeros((0, 0))
    expr = np.full(b, -1, dtype=np.int64)
    au = np.zeros((b, AU_COUNT))
    va = np.zeros((b, 2))
    has = np.zeros((3, b), dtype=bool)
    for i, s in enumerate(samples):
        lab = s.labels
        if lab.expr is not None:
            expr[i] = lab.expr
            has[0, i] = True
        if lab.au is not None:
            au[i] = lab.au
            has[1, i] = True
        if lab.va is not None:
            va[i] = lab.va
            has[2, i] = True
    return x, LabelBatch(expr, au, va, has[0], has[1], has[2])


@dataclass
class ArrayDataset:
    """Column-oriented view of a sample list, for fast batching."""

    features: np.ndarray
    labels: LabelBatch

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "ArrayDataset":
        return cls(*to_arrays(samples))

    def __len__(self):
        return len(self.labels)

    def take(self, idx) -> Tuple[np.ndarray, LabelBatch]:
        lab = self.labels
        return self.features[idx], LabelBatch(lab.expr[idx], lab.au[idx], lab.va[idx],
                                              lab.has_expr[idx], lab.has_au[idx], lab.has_va[idx])


# ------------------------------------------------------------------ JSONL

def _record(s: Sample) -> dict:
    lab = s.labels
    return {"id": s.id, "group_id": s.group_id,
            "features": [float(v) for v in s.features],
            "expr": lab.expr,
            "au": list(lab.au) if lab.au is not None else None,
            "va": list(lab.va) if lab.va is not None else None}


def write_jsonl(samples: Iterable[Sample], path) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(_record(s)) + "\n")


def _parse(rec, lineno: int) -> Sample:
    def bad(msg):
        return DataFormatError(f"line {lineno}: {msg}")

    if not isinstance(rec, dict):
        raise bad("record is not an object")
    required = {"id", "group_id", "features", "expr", "au", "va"}
    if set(rec) != required:
        raise bad(f"expected keys {sorted(required)}, got {sorted(rec)}")
    if not isinstance(rec["id"], int) or not isinstance(rec["group_id"], int):
        raise bad("id and group_id must be integers")
    feats = rec["features"]
    if not isinstance(feats, list) or not feats or not all(isinstance(v, (int, float)) for v in feats):
        raise bad("features must be a non-empty list of numbers")
    features = np.array(feats, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        raise bad("features must be finite")
    expr, au, va = rec["expr"], rec["au"], rec["va"]
    if expr is not None and (not isinstance(expr, int) or expr < 0):
        raise bad(f"expr must be a non-negative integer or null, got {expr!r}")
    if au is not None:
        if not isinstance(au, list) or len(au) != AU_COUNT or any(v not in (0, 1) for v in au):
            raise bad(f"au must be a list of {AU_COUNT} bits or null")
        au = tuple(int(v) for v in au)
    if va is not None:
        if (not isinstance(va, list) or len(va) != 2
                or not all(isinstance(v, (int, float)) and -1.0 <= v <= 1.0 for v in va)):
            raise bad("va must be two numbers in [-1, 1] or null")
        va = (float(va[0]), float(va[1]))
    labels = TaskLabels(expr, au, va)
    if not labels.any():
        raise bad("record has no task label")
    return Sample(rec["id"], features, labels, rec["group_id"])


def read_jsonl(path) -> List[Sample]:
    samples = []
    seen = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            s = _parse(rec, lineno)
            if s.id in seen:
                raise DataFormatError(f"line {lineno}: duplicate id {s.id}")
            seen.add(s.id)
            samples.append(s)
    return samples


def build_dataset(cfg: DataGenConfig) -> List[Sample]:
    """Generate and apply the configured missingness in one go."""
    return apply_missingness(generate_dataset(cfg), cfg.missing, seed=cfg.seed + 1)
