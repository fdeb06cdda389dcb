"""Report figures, rendered headless to PNG."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .selftrain import RoundReport  # noqa: E402
from .trainer import TrainReport  # noqa: E402

# no Software/date chunks, so reruns write identical bytes
_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return Path(path)


def training_curve(report: TrainReport, path: str | Path) -> Path:
    ep = [e.epoch for e in report.epochs]
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
    a.plot(ep, [e.loss for e in report.epochs], label="total")
    a.plot(ep, [e.classification for e in report.epochs], label="classification", ls="--")
    a.plot(ep, [e.intra for e in report.epochs], label="intra", ls=":")
    a.plot(ep, [e.inter for e in report.epochs], label="inter", ls=":")
    a.set_xlabel("epoch")
    a.set_ylabel("loss")
    a.legend(fontsize=8)
    vals = [(e.epoch, e.val_micro_f1, e.val_macro_f1) for e in report.epochs if e.val_macro_f1 is not None]
    if vals:
        b.plot([v[0] for v in vals], [v[1] for v in vals], marker="o", label="micro")
        b.plot([v[0] for v in vals], [v[2] for v in vals], marker="s", label="macro")
        b.axvline(report.best_epoch, color="grey", lw=0.8)
        b.legend(fontsize=8)
    b.set_xlabel("epoch")
    b.set_ylabel("validation F1")
    return _save(fig, path)


def round_trajectory(reports: Sequence[RoundReport], path: str | Path) -> Path:
    rounds = [r.round for r in reports]
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
    if any(r.val_macro_f1 is not None for r in reports):
        a.plot(rounds, [r.val_micro_f1 for r in reports], marker="o", label="micro")
        a.plot(rounds, [r.val_macro_f1 for r in reports], marker="s", label="macro")
        a.legend(fontsize=8)
    a.set_xlabel("round")
    a.set_ylabel("validation F1")
    b.plot(rounds, [r.labeled_size for r in reports], marker="o", label="labeled")
    b.plot(rounds, [r.pool_size for r in reports], marker="s", label="pool")
    b.set_xlabel("round")
    b.set_ylabel("queries")
    b.legend(fontsize=8)
    return _save(fig, path)


def ablation_bars(medians: dict[str, float], path: str | Path) -> Path:
    names = list(medians)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(names)), [medians[n] for n in names], color="#4c72b0")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels([n.replace("_", " ") for n in names], rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("median child Macro-F1")
    return _save(fig, path)


def sweep_deltas(rows: Sequence[tuple[str, float, float, float]], path: str | Path) -> Path:
    """``rows`` are (parameter, value, delta micro, delta macro) in points."""
    params = list(dict.fromkeys(r[0] for r in rows))
    fig, axes = plt.subplots(1, len(params), figsize=(3.2 * len(params), 3.2), squeeze=False)
    for ax, p in zip(axes[0], params):
        sel = [r for r in rows if r[0] == p]
        xs = [f"{r[1]:g}" for r in sel]
        ax.plot(xs, [r[2] for r in sel], marker="o", label="Δ micro")
        ax.plot(xs, [r[3] for r in sel], marker="s", label="Δ macro")
        ax.axhline(0, color="grey", lw=0.8)
        ax.set_title(p, fontsize=9)
        ax.set_xlabel("value")
    axes[0][0].set_ylabel("points vs baseline")
    axes[0][0].legend(fontsize=8)
    return _save(fig, path)
