"""Mean-teacher training loop, evaluation and the three-way ablation."""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from . import data as data_mod
from . import losses, selfcure
from .losses import LabelBatch, LossBreakdown
from .metrics import MetricsReport, score_predictions
from .model import ModelConfig, ModelParams, forward, init_model, predict
from .optim import AdamState, adam_step
from .teacher import NoiseConfig, TeacherState, ema_update, make_pseudo_labels, perturb

logger = logging.getLogger(__name__)

BASELINE = "baseline"
MEAN_TEACHER = "mt"
MEAN_TEACHER_SC = "mt-sc"
MODES = (BASELINE, MEAN_TEACHER, MEAN_TEACHER_SC)
_ALIASES = {"mean-teacher": MEAN_TEACHER, "mean-teacher+selfcure": MEAN_TEACHER_SC}

HISTORY_FIELDS = ("epoch", "split", "ccc_v", "ccc_a", "f1_expr", "acc_expr", "f1_au", "acc_au",
                  "m_va", "m_expr", "m_au", "total_loss", "supervised_fraction")


def normalize_mode(mode: str) -> str:
    mode = _ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    return mode


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: data_mod.DataGenConfig = field(default_factory=data_mod.DataGenConfig)
    dataset_path: Optional[str] = None
    learning_rate: float = 5e-4
    batch_size: int = 32
    epochs: int = 20
    eta: float = 0.99
    delta: float = selfcure.DEFAULT_DELTA
    beta: float = selfcure.DEFAULT_BETA
    loss_weights: Tuple[float, float, float] = losses.DEFAULT_WEIGHTS
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    mode: str = MEAN_TEACHER_SC
    seed: int = 0
    val_ratio: float = 0.2
    expr_label_noise: float = 0.0
    baseline_labels: str = "complete"
    eval_teacher: bool = False
    literal_va: bool = False
    au_exact_match: bool = False
    output_dir: Optional[str] = None

    def validate(self):
        self.mode = normalize_mode(self.mode)
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 <= self.eta < 1.0:
            raise ValueError(f"eta must lie in [0, 1), got {self.eta}")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if len(self.loss_weights) != 3 or min(self.loss_weights) < 0:
            raise ValueError(f"loss_weights must be three non-negative numbers, got {self.loss_weights}")
        if not 0.0 < self.val_ratio < 1.0:
            raise ValueError("val_ratio must lie in (0, 1)")
        if self.baseline_labels not in ("complete", "available"):
            raise ValueError(f"baseline_labels must be 'complete' or 'available', got {self.baseline_labels!r}")
        if not 0.0 <= self.expr_label_noise <= 1.0:
            raise ValueError("expr_label_noise must lie in [0, 1]")
        self.model.validate()
        if self.dataset_path is None:
            self.data.validate()
            if self.data.input_dim != self.model.input_dim:
                raise ValueError(f"data.input_dim {self.data.input_dim} != model.input_dim {self.model.input_dim}")
            if self.data.expr_classes != self.model.expr_classes:
                raise ValueError("data.expr_classes must equal model.expr_classes")
        return self

    @property
    def uses_teacher(self) -> bool:
        return self.mode != BASELINE

    @property
    def uses_selfcure(self) -> bool:
        return self.mode == MEAN_TEACHER_SC

    def with_seed(self, seed: int) -> "TrainConfig":
        cfg = copy.deepcopy(self)
        cfg.seed = seed
        cfg.model.seed = seed
        cfg.data.seed = seed
        cfg.noise.seed = seed
        return cfg


class Trainer:
    """Holds student, teacher and optimizer state across steps."""

    def __init__(self, config: TrainConfig, student: Optional[ModelParams] = None):
        self.config = config.validate()
        self.student = student if student is not None else init_model(config.model)
        self.adam = AdamState.zeros_like(self.student)
        self._teacher = TeacherState.from_student(self.student, config.eta) if config.uses_teacher else None
        self.teacher_reads = 0
        self.noise_rng = np.random.default_rng([config.noise.seed, 1])
        self.steps = 0

    @property
    def teacher(self) -> Optional[TeacherState]:
        self.teacher_reads += 1
        return self._teacher

    def train_step(self, x: np.ndarray, labels: LabelBatch) -> LossBreakdown:
        """One optimizer step on a batch.

        Teacher predictions come from the perturbed batch; the student sees
        the clean batch. Each task takes ground truth where it exists and
        the teacher's hard labels elsewhere (baseline mode: labeled rows only).
        """
        cfg = self.config
        if len(labels) == 0:
            raise ValueError("empty batch")
        pseudo = None
        if cfg.uses_teacher:
            teacher = self.teacher
            noisy = perturb(x, cfg.noise, self.noise_rng)
            pseudo = make_pseudo_labels(predict(teacher.params, noisy, cfg.uses_selfcure))

        tape = ad.Tape()
        preds, _ = forward(self.student, x, tape, use_selfcure=cfg.uses_selfcure)
        split = None
        rr_value = 0.0
        if cfg.uses_selfcure and len(labels) >= 2:
            split = selfcure.split_high_low(preds.importance.value, cfg.beta)
            rr_value = selfcure.rr_loss_value(split, cfg.delta)

        routed = {}
        for task in losses.TASKS:
            routed[task] = losses.route_task_loss(
                task, preds, labels, pseudo, supervised_only=not cfg.uses_teacher,
                split=split if task == "expr" else None, delta=cfg.delta,
                literal_va=cfg.literal_va)
            if routed[task].flag == losses.SKIPPED and labels.present(task).any():
                logger.debug("step %d: %s term skipped", self.steps, task)
        breakdown = losses.total_loss(routed, cfg.loss_weights, rr_value)
        if breakdown.node is not None:
            grads = tape.backward(breakdown.node)
            adam_step(self.student, grads, self.adam, cfg.learning_rate)
        if cfg.uses_teacher:
            self._teacher = ema_update(self._teacher, self.student)
        self.steps += 1
        return breakdown

    def eval_params(self) -> ModelParams:
        if self.config.eval_teacher and self.config.uses_teacher:
            return self.teacher.params
        return self.student


def evaluate(params: ModelParams, dataset, use_selfcure: bool = True,
             au_exact_match: bool = False) -> MetricsReport:
    """Gradient-free metrics over the labeled samples of each task."""
    if not isinstance(dataset, data_mod.ArrayDataset):
        dataset = data_mod.ArrayDataset.from_samples(dataset)
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    p = predict(params, dataset.features, use_selfcure)
    return score_predictions(p.expr_logits, p.au_probs, p.va, dataset.labels,
                             params.config.expr_classes, au_exact_match)


@dataclass
class TrainResult:
    trainer: Trainer
    history: List[dict]
    final: MetricsReport
    supervised_flags_only: bool
    seconds: float


def prepare_data(cfg: TrainConfig, samples: Optional[Sequence[data_mod.Sample]] = None):
    """Build (or take) the dataset and split it; label noise hits the train side only."""
    if samples is None:
        if cfg.dataset_path:
            samples = data_mod.read_jsonl(cfg.dataset_path)
        else:
            samples = data_mod.build_dataset(cfg.data)
    train, val = data_mod.split_train_val(samples, 1.0 - cfg.val_ratio, seed=cfg.seed)
    if cfg.expr_label_noise > 0:
        train = data_mod.inject_expr_noise(train, cfg.expr_label_noise,
                                           cfg.model.expr_classes, seed=cfg.seed + 7)
    return train, val


def _history_row(epoch, split, report: MetricsReport, total_loss="", sup_frac=""):
    row = {"epoch": epoch, "split": split, "total_loss": total_loss, "supervised_fraction": sup_frac}
    rep = report.as_row()
    for k in HISTORY_FIELDS:
        if k in rep:
            row[k] = rep[k]
    return row


def train(cfg: TrainConfig, train_samples=None, val_samples=None) -> TrainResult:
    """Full training run. Returns per-epoch history and the final val report."""
    cfg.validate()
    t0 = time.perf_counter()
    if train_samples is None:
        train_samples, val_samples = prepare_data(cfg)
    if cfg.mode == BASELINE and cfg.baseline_labels == "complete":
        # the supervised reference model only sees fully labeled samples
        train_samples = [s for s in train_samples if all(s.labels.mask)]
        if len(train_samples) < 2:
            raise ValueError("baseline_labels='complete' but fewer than 2 fully labeled samples")
    train_ds = data_mod.ArrayDataset.from_samples(train_samples)
    val_ds = data_mod.ArrayDataset.from_samples(val_samples) if val_samples else None
    trainer = Trainer(cfg)
    rng = np.random.default_rng([cfg.seed, 0])
    n = len(train_ds)
    history = []
    only_supervised = True
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        losses_seen, n_sup, n_con = [], 0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            x, lab = train_ds.take(idx)
            bd = trainer.train_step(x, lab)
            losses_seen.append(bd.total)
            n_sup += bd.n_supervised
            n_con += bd.n_consistency
            if any(f not in (losses.SUPERVISED, losses.SKIPPED) for f in bd.flags.values()):
                only_supervised = False
        sup_frac = n_sup / (n_sup + n_con) if n_sup + n_con else 1.0
        params = trainer.eval_params()
        rep_train = evaluate(params, train_ds, cfg.uses_selfcure, cfg.au_exact_match)
        history.append(_history_row(epoch, "train", rep_train, float(np.mean(losses_seen)), sup_frac))
        if val_ds is not None:
            rep_val = evaluate(params, val_ds, cfg.uses_selfcure, cfg.au_exact_match)
            history.append(_history_row(epoch, "val", rep_val))
        logger.info("epoch %d/%d mode=%s loss=%.4f sup=%.3f", epoch, cfg.epochs, cfg.mode,
                    np.mean(losses_seen), sup_frac)
    params = trainer.eval_params()
    final_ds = val_ds if val_ds is not None else train_ds
    final = evaluate(params, final_ds, cfg.uses_selfcure, cfg.au_exact_match)
    return TrainResult(trainer, history, final, only_supervised, time.perf_counter() - t0)


ABLATION_FIELDS = ("seed", "mode", "expr_label_noise", "m_expr", "m_va", "m_au",
                   "f1_expr", "acc_expr", "ccc_v", "ccc_a", "f1_au", "acc_au", "seconds")


def run_ablation(cfg: TrainConfig, seeds: Sequence[int] = (1, 2, 3),
                 modes: Sequence[str] = MODES) -> List[dict]:
    """Train every mode on the same dataset/split for each seed; one row per (seed, mode)."""
    rows = []
    for seed in seeds:
        scfg = cfg.with_seed(seed).validate()
        train_s, val_s = prepare_data(scfg)
        for mode in modes:
            mcfg = copy.deepcopy(scfg)
            mcfg.mode = normalize_mode(mode)
            res = train(mcfg, train_s, val_s)
            rep = res.final
            rows.append({"seed": seed, "mode": mcfg.mode, "expr_label_noise": cfg.expr_label_noise,
                         "m_expr": rep.m_expr, "m_va": rep.m_va, "m_au": rep.m_au,
                         "f1_expr": rep.f1_expr, "acc_expr": rep.acc_expr,
                         "ccc_v": rep.ccc_v, "ccc_a": rep.ccc_a,
                         "f1_au": rep.f1_au, "acc_au": rep.acc_au,
                         "seconds": round(res.seconds, 2)})
            logger.info("seed %d %-8s M_Expr=%.4f M_VA=%.4f M_AU=%.4f (%.1fs)", seed, mcfg.mode,
                        rep.m_expr, rep.m_va, rep.m_au, res.seconds)
    return rows
