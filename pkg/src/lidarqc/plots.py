"""Report figures. Everything renders through Agg straight to files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from lidarqc.analysis import CalibrationReport, SelectionTrace  # noqa: E402

_META = {"Software": "lidarqc"}


def reliability_diagram(report: CalibrationReport, path: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    centers, heights, weights = [], [], []
    for b in report.bins:
        if b.count == 0:
            continue
        centers.append(0.5 * (b.lower + b.upper))
        heights.append(b.accuracy)
        weights.append(b.count / report.total)
    ax.bar(centers, heights, width=0.1, edgecolor="black",
           color="tab:blue", alpha=0.8, label="observed")
    ax.plot([0, 1], [0, 1], "k--", linewidth=1, label="ideal")
    for c, wgt in zip(centers, weights):
        ax.annotate(f"{wgt:.2f}", (c, 0.02), ha="center", fontsize=7)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("confidence")
    ax.set_ylabel("accuracy")
    ax.set_title(f"reliability ({report.mode})  "
                 f"ECE={report.ece:.4f}  MCE={report.mce:.4f}")
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)


def selection_curve(trace: SelectionTrace, path: str) -> None:
    steps = list(range(1, len(trace.steps) + 1))
    scores = [s.objective for s in trace.steps]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, scores, marker="o", color="tab:green")
    for i, s in zip(steps, trace.steps):
        ax.annotate(s.metric, (i, s.objective), fontsize=6,
                    rotation=45, ha="left", va="bottom")
    ax.set_xlabel("step")
    ax.set_ylabel(trace.objective_name)
    ax.set_title("greedy metric selection")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)


def scatter_true_pred(y_true: np.ndarray, y_pred: np.ndarray, path: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(y_true, y_pred, s=6, alpha=0.4, color="tab:purple")
    ax.plot([0, 1], [0, 1], "k--", linewidth=1)
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("adjusted IoU")
    ax.set_ylabel("predicted")
    ax.set_title("regression quality")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)


def score_histogram(scores: np.ndarray, labels: np.ndarray, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = np.linspace(0.0, 1.0, 26)
    ax.hist(scores[labels == 0], bins=bins, alpha=0.6, label="true positive",
            color="tab:blue")
    ax.hist(scores[labels == 1], bins=bins, alpha=0.6, label="false positive",
            color="tab:red")
    ax.set_xlabel("classifier score")
    ax.set_ylabel("segments")
    ax.set_title("score distribution by outcome")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
