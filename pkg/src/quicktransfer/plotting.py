"""Report figures written next to the CSV/JSON outputs."""

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .nn import atomic_write  # noqa: E402

plt.rcParams.update({
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
})

_META = {"Software": None}


def _save(fig, path):
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=120, bbox_inches="tight", metadata=_META)
    plt.close(fig)
    atomic_write(path, buf.getvalue())


def plot_adapt_reports(reports, path):
    """Loss curves of one or more fine-tuning runs; ``reports`` maps label -> AdaptReport."""
    fig, axes = plt.subplots(1, 3, figsize=(10, 3))
    for label, rep in reports.items():
        its = [0] + [r["iter"] for r in rep.records]
        for ax, key in zip(axes, ("loss_total", "loss_class", "loss_mmd")):
            ys = [rep.initial[key]] + [r[key] for r in rep.records]
            ax.plot(its, ys, label=label)
    for ax, title in zip(axes, ("total", "classification", "class-wise MMD$^2$")):
        ax.set_title(title)
        ax.set_xlabel("iteration")
        ax.set_yscale("symlog", linthresh=1e-4)
    axes[0].legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def plot_confusion(confusion, path, class_names=None):
    conf = np.asarray(confusion)
    C = conf.shape[0]
    names = class_names or [str(c) for c in range(C)]
    fig, ax = plt.subplots(figsize=(3.2, 3))
    ax.imshow(conf, cmap="Blues")
    for i in range(C):
        for j in range(C):
            ax.text(j, i, str(conf[i, j]), ha="center", va="center", fontsize=8)
    ax.set_xticks(range(C), names)
    ax.set_yticks(range(C), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.tight_layout()
    _save(fig, path)


def plot_teacher_log(rows, path):
    """Pretraining curve per autoencoder plus the fine-tuning curve."""
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3))
    layers = sorted({r[1] for r in rows if r[0] == "pretrain"})
    for layer in layers:
        pts = [(r[2], r[3]) for r in rows if r[0] == "pretrain" and r[1] == layer]
        a1.plot(*zip(*pts), label=f"AE {layer}")
    ft = [(r[2], r[3]) for r in rows if r[0] == "finetune"]
    if ft:
        a2.plot(*zip(*ft), color="k")
    a1.set_title("sparse AE pretraining")
    a2.set_title("supervised fine-tuning")
    for ax in (a1, a2):
        ax.set_xlabel("epoch")
        ax.set_yscale("log")
    if layers:
        a1.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)
