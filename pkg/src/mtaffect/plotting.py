"""Figures written next to the CSV reports."""

from __future__ import annotations

from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SCORES = ("m_expr", "m_va", "m_au")
LABELS = {"m_expr": r"$M_{Expr}$", "m_va": r"$M_{VA}$", "m_au": r"$M_{AU}$"}
MODE_COLORS = {"baseline": "0.55", "mt": "tab:blue", "mt-sc": "tab:orange"}


def _num(v):
    return np.nan if v in ("", None) else float(v)


def plot_history(history: List[dict], path, title: str = "") -> None:
    """Per-epoch composite scores (train dashed, val solid) plus training loss."""
    fig, (ax_m, ax_l) = plt.subplots(1, 2, figsize=(10, 3.8))
    for score, color in zip(SCORES, ("tab:red", "tab:green", "tab:purple")):
        for split, style in (("train", "--"), ("val", "-")):
            rows = [r for r in history if r["split"] == split]
            if not rows:
                continue
            ax_m.plot([r["epoch"] for r in rows], [_num(r[score]) for r in rows], style,
                      color=color, label=f"{LABELS[score]} {split}")
    ax_m.set_xlabel("epoch")
    ax_m.set_ylabel("score")
    ax_m.legend(fontsize=7, ncol=2)
    train_rows = [r for r in history if r["split"] == "train"]
    ax_l.plot([r["epoch"] for r in train_rows], [_num(r["total_loss"]) for r in train_rows], "k-")
    ax_l.set_xlabel("epoch")
    ax_l.set_ylabel("mean total loss")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def summarize_ablation(rows: Sequence[dict]) -> Dict[str, Dict[str, tuple]]:
    """mean and std of each composite per mode."""
    out = {}
    for mode in dict.fromkeys(r["mode"] for r in rows):
        sel = [r for r in rows if r["mode"] == mode]
        out[mode] = {s: (float(np.nanmean([_num(r[s]) for r in sel])),
                         float(np.nanstd([_num(r[s]) for r in sel]))) for s in SCORES}
    return out


def plot_ablation(rows: Sequence[dict], path, title: str = "") -> None:
    summary = summarize_ablation(rows)
    modes = list(summary)
    width = 0.8 / max(len(modes), 1)
    x = np.arange(len(SCORES))
    fig, ax = plt.subplots(figsize=(6, 3.8))
    for i, mode in enumerate(modes):
        means = [summary[mode][s][0] for s in SCORES]
        stds = [summary[mode][s][1] for s in SCORES]
        ax.bar(x + (i - (len(modes) - 1) / 2) * width, means, width, yerr=stds, capsize=3,
               color=MODE_COLORS.get(mode, None), label=mode)
    ax.set_xticks(x)
    ax.set_xticklabels([LABELS[s] for s in SCORES])
    lo = min(summary[m][s][0] - summary[m][s][1] for m in modes for s in SCORES)
    ax.set_ylim(max(0.0, lo - 0.05), 1.0)
    ax.set_ylabel("validation score")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
