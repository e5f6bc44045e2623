"""Shared MLP encoder with expression, AU and valence-arousal heads."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from . import selfcure

AU_COUNT = 12
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    input_dim: int = 16
    hidden_dims: List[int] = field(default_factory=lambda: [64, 64])
    expr_classes: int = 7
    au_count: int = AU_COUNT
    seed: int = 0

    def validate(self):
        if self.au_count != AU_COUNT:
            raise ValueError(f"au_count must be {AU_COUNT}, got {self.au_count}")
        if self.expr_classes < 2:
            raise ValueError(f"expr_classes must be >= 2, got {self.expr_classes}")
        dims = [self.input_dim, *self.hidden_dims]
        if any(int(d) <= 0 for d in dims):
            raise ValueError(f"layer sizes must be positive, got {dims}")
        return self


@dataclass
class ModelParams:
    """Named parameter blocks in a fixed, enumerable order."""

    config: ModelConfig
    blocks: Dict[str, np.ndarray]

    def names(self) -> List[str]:
        return list(self.blocks)

    def __getitem__(self, name):
        return self.blocks[name]

    def flat(self) -> np.ndarray:
        return np.concatenate([b.ravel() for b in self.blocks.values()])

    def num_params(self) -> int:
        return sum(b.size for b in self.blocks.values())

    def same_layout(self, other: "ModelParams") -> bool:
        return (self.names() == other.names()
                and all(self.blocks[k].shape == other.blocks[k].shape for k in self.blocks))


@dataclass
class TaskPredictions:
    expr_logits: ad.Node
    importance: ad.Node
    au_probs: ad.Node
    va: ad.Node
    features: Optional[ad.Node] = None

    def numpy(self) -> "PredictionArrays":
        return PredictionArrays(self.expr_logits.value.copy(), self.importance.value.ravel().copy(),
                                self.au_probs.value.copy(), self.va.value.copy())


@dataclass
class PredictionArrays:
    expr_logits: np.ndarray
    importance: np.ndarray
    au_probs: np.ndarray
    va: np.ndarray


def layout(config: ModelConfig) -> List[Tuple[str, Tuple[int, int]]]:
    dims = [config.input_dim, *config.hidden_dims]
    out = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        out += [(f"enc{i}.W", (a, b)), (f"enc{i}.b", (1, b))]
    feat = dims[-1]
    for head, width in (("expr", config.expr_classes), ("attn", 1),
                        ("au", config.au_count), ("va", 2)):
        out += [(f"{head}.W", (feat, width)), (f"{head}.b", (1, width))]
    return out


def init_model(config: ModelConfig) -> ModelParams:
    """Glorot-uniform weights, zero biases, drawn from ``config.seed``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    blocks = {}
    for name, shape in layout(config):
        if name.endswith(".b"):
            blocks[name] = np.zeros(shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            blocks[name] = rng.uniform(-limit, limit, size=shape)
    return ModelParams(config, blocks)


def clone_params(params: ModelParams) -> ModelParams:
    cfg = ModelConfig(**asdict(params.config))
    return ModelParams(cfg, {k: v.copy() for k, v in params.blocks.items()})


def bind(params: ModelParams, tape: ad.Tape, trainable: bool = True) -> Dict[str, ad.Node]:
    """Register every parameter block on ``tape`` (as params or constants)."""
    if trainable:
        return {k: tape.param(v, k) for k, v in params.blocks.items()}
    return {k: tape.const(v, k) for k, v in params.blocks.items()}


def forward_nodes(nodes: Dict[str, ad.Node], config: ModelConfig, x: ad.Node,
                  use_selfcure: bool = True) -> TaskPredictions:
    if x.shape[1] != config.input_dim:
        raise ad.ShapeError(f"model expects {config.input_dim} features, got {x.shape[1]}")
    h = x
    for i in range(len(config.hidden_dims)):
        h = ad.relu(ad.add_row(ad.matmul(h, nodes[f"enc{i}.W"]), nodes[f"enc{i}.b"]))
    logits = ad.add_row(ad.matmul(h, nodes["expr.W"]), nodes["expr.b"])
    weights = selfcure.importance_weights(h, nodes["attn.W"], nodes["attn.b"])
    if use_selfcure:
        logits = selfcure.apply_weighting(logits, weights)
    au = ad.sigmoid(ad.add_row(ad.matmul(h, nodes["au.W"]), nodes["au.b"]))
    va = ad.tanh(ad.add_row(ad.matmul(h, nodes["va.W"]), nodes["va.b"]))
    return TaskPredictions(logits, weights, au, va, h)


def forward(params: ModelParams, features, tape: ad.Tape, use_selfcure: bool = True,
            trainable: bool = True) -> Tuple[TaskPredictions, Dict[str, ad.Node]]:
    nodes = bind(params, tape, trainable)
    x = tape.const(features)
    return forward_nodes(nodes, params.config, x, use_selfcure), nodes


def predict(params: ModelParams, features, use_selfcure: bool = True) -> PredictionArrays:
    """Gradient-free forward pass returning plain arrays."""
    preds, _ = forward(params, features, ad.Tape(), use_selfcure, trainable=False)
    return preds.numpy()


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, params: ModelParams, extra: Optional[dict] = None):
    header = {"layout_version": CHECKPOINT_VERSION, "config": asdict(params.config),
              "blocks": params.names()}
    if extra:
        header.update(extra)
    arrays = {f"p{i}": v for i, v in enumerate(params.blocks.values())}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **arrays)


def load_checkpoint(path) -> Tuple[ModelParams, dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("layout_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint layout {header.get('layout_version')}")
        config = ModelConfig(**header["config"]).validate()
        blocks = {name: z[f"p{i}"].astype(np.float64) for i, name in enumerate(header["blocks"])}
    expected = layout(config)
    if [(k, v.shape) for k, v in blocks.items()] != [(k, tuple(s)) for k, s in expected]:
        raise ValueError("checkpoint blocks do not match the layout implied by its config")
    return ModelParams(config, blocks), header
