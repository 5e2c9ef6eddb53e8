"""Report figures; every figure is written next to a CSV holding its data."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import MetricsReport, write_comparison_csv  # noqa: E402

STYLE = {
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def plot_class_metrics(reports: dict[str, MetricsReport], path, class_names: Sequence[str] | None = None) -> Path:
    """Grouped bars of per-class F20, LE_CD and LR_CD, one group per class."""
    path = Path(path)
    names = list(reports)
    n_classes = max(len(r.per_class) for r in reports.values())
    labels = list(class_names) if class_names else [str(c) for c in range(n_classes)]
    rows = []
    for sys_name, rep in reports.items():
        for c in rep.per_class:
            rows.append([sys_name, labels[c.class_id], c.f20, c.le_cd, c.lr_cd])
    _write_csv(path.with_suffix(".csv"), ["system", "class", "F20", "LE_CD", "LR_CD"], rows)

    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, 1, figsize=(max(6.0, 0.5 * n_classes * len(names)), 6.5), sharex=True)
        x = np.arange(n_classes)
        width = 0.8 / len(names)
        for k, (sys_name, rep) in enumerate(reports.items()):
            for ax, attr in zip(axes, ("f20", "le_cd", "lr_cd")):
                vals = [np.nan if getattr(c, attr) is None else getattr(c, attr) for c in rep.per_class]
                ax.bar(x[:len(vals)] + (k - (len(names) - 1) / 2) * width, vals, width, label=sys_name)
        for ax, ylabel in zip(axes, ("F20", "LE_CD (deg)", "LR_CD")):
            ax.set_ylabel(ylabel)
        axes[0].set_ylim(0, 1)
        axes[2].set_ylim(0, 1)
        axes[-1].set_xticks(x)
        axes[-1].set_xticklabels(labels, rotation=45, ha="right")
        axes[0].legend(ncol=len(names))
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_loss_curves(histories: dict[str, list[dict]], path) -> Path:
    """Training loss and validation SELD score per epoch."""
    path = Path(path)
    rows = []
    for name, hist in histories.items():
        for i, rec in enumerate(hist, 1):
            rows.append([name, i, rec.get("stage", 1), rec["train_loss"], rec.get("SELD")])
    _write_csv(path.with_suffix(".csv"), ["run", "epoch", "stage", "train_loss", "val_seld"], rows)

    with plt.rc_context(STYLE):
        fig, (ax_l, ax_s) = plt.subplots(1, 2, figsize=(9, 3.2))
        for name, hist in histories.items():
            ep = np.arange(1, len(hist) + 1)
            ax_l.plot(ep, [r["train_loss"] for r in hist], label=name)
            ax_s.plot(ep, [r.get("SELD", np.nan) for r in hist], label=name)
        ax_l.set_yscale("log")
        ax_l.set_xlabel("epoch")
        ax_l.set_ylabel("training loss")
        ax_s.set_xlabel("epoch")
        ax_s.set_ylabel("validation SELD score")
        ax_s.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_comparison(reports: dict[str, MetricsReport], path) -> Path:
    """Side-by-side bars of the four metrics and the aggregate score per system."""
    path = Path(path)
    keys = ("ER20", "F20", "LE_CD", "LR_CD", "SELD")
    write_comparison_csv(path.with_suffix(".csv"), reports)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(keys), figsize=(2.0 * len(keys), 2.8))
        names = list(reports)
        for ax, k in zip(axes, keys):
            ax.bar(range(len(names)), [reports[n].row()[k] for n in names], color="C0")
            ax.set_title(k)
            ax.set_xticks(range(len(names)))
            ax.set_xticklabels(names, rotation=45, ha="right")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
