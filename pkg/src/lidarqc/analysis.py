"""Metric selection and confidence calibration analysis.

Greedy forward selection re-runs the full grouped cross-validation for
every candidate metric at every step, so the trace is directly comparable
with whole-set results. Calibration bins follow the usual ten right-closed
confidence intervals.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lidarqc.features import MetaDataset
from lidarqc.gbt import GbtParams
from lidarqc.meta import LinearParams, cross_validate

N_BINS = 10


@dataclass(frozen=True)
class SelectionStep:
    metric: str
    objective: float


@dataclass(frozen=True)
class SelectionTrace:
    task: str
    objective_name: str
    steps: tuple[SelectionStep, ...]

    def metrics(self) -> list[str]:
        return [s.metric for s in self.steps]


def greedy_select(dataset: MetaDataset, task: str, kind: str,
                  params: GbtParams | LinearParams | None = None,
                  max_metrics: int | None = None, folds: int = 10,
                  seed: int = 0, split: str = "validation") -> SelectionTrace:
    """Forward metric selection under the grouped CV protocol.

    Starts from the empty set; each step adds the candidate whose
    cross-validated objective (accuracy for classification, coefficient
    of determination for regression) is highest, breaking ties by metric
    name. `split` may be "train" to optimize training-set scores instead.
    """
    if split not in ("train", "validation"):
        raise ValueError(f"unknown split {split}")
    objective_name = "acc" if task == "classify" else "r2"
    limit = len(dataset.columns) if max_metrics is None else max_metrics
    if limit < 1:
        raise ValueError("must select at least one metric")
    limit = min(limit, len(dataset.columns))

    selected: list[str] = []
    steps: list[SelectionStep] = []
    remaining = sorted(dataset.columns)
    while len(selected) < limit:
        best_metric = None
        best_value = -np.inf
        for candidate in remaining:
            sub = dataset.select_columns(selected + [candidate])
            report = cross_validate(sub, task, kind, params, folds=folds, seed=seed)
            value = report.metrics[objective_name][split]["mean"]
            if value > best_value:
                best_value = value
                best_metric = candidate
        selected.append(best_metric)
        remaining.remove(best_metric)
        steps.append(SelectionStep(metric=best_metric, objective=float(best_value)))
    return SelectionTrace(task=task, objective_name=objective_name,
                          steps=tuple(steps))


def write_selection_csv(path: str | Path, trace: SelectionTrace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "added_metric", trace.objective_name])
        for i, step in enumerate(trace.steps, start=1):
            writer.writerow([i, step.metric, repr(step.objective)])


@dataclass(frozen=True)
class CalibrationBin:
    lower: float
    upper: float
    count: int
    confidence: float | None
    accuracy: float | None


@dataclass(frozen=True)
class CalibrationReport:
    mode: str
    total: int
    bins: tuple[CalibrationBin, ...]
    mce: float
    ece: float


def calibration(probabilities: np.ndarray, labels: np.ndarray,
                mode: str = "predicted_class") -> CalibrationReport:
    """Reliability statistics over ten right-closed confidence bins.

    In the default mode the confidence of a sample is max(p, 1 - p) for
    the class picked at threshold 0.5, and a bin's accuracy is the
    fraction of correct picks. In "raw" mode the probability itself is
    binned and a bin's accuracy is the empirical positive rate. The
    maximum calibration error is the largest gap over non-empty bins, the
    expected calibration error its count-weighted average, so ece <= mce.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64) > 0.5
    if len(p) == 0:
        raise ValueError("no samples")
    if len(p) != len(y):
        raise ValueError("probabilities and labels disagree")
    if (p < 0).any() or (p > 1).any():
        raise ValueError("probabilities outside [0, 1]")
    if mode == "predicted_class":
        confidence = np.maximum(p, 1.0 - p)
        correct = (p >= 0.5) == y
    elif mode == "raw":
        confidence = p
        correct = y
    else:
        raise ValueError(f"unknown calibration mode {mode}")

    # right-closed bins: (0.0, 0.1], ..., (0.9, 1.0]; exact zeros join the first
    idx = np.clip(np.ceil(confidence * N_BINS).astype(np.int64) - 1, 0, N_BINS - 1)
    bins = []
    mce = 0.0
    ece = 0.0
    for b in range(N_BINS):
        members = idx == b
        count = int(members.sum())
        if count == 0:
            bins.append(CalibrationBin(b / N_BINS, (b + 1) / N_BINS, 0, None, None))
            continue
        conf = float(confidence[members].mean())
        acc = float(correct[members].mean())
        gap = abs(acc - conf)
        mce = max(mce, gap)
        ece += count / len(p) * gap
        bins.append(CalibrationBin(b / N_BINS, (b + 1) / N_BINS, count, conf, acc))
    return CalibrationReport(mode=mode, total=len(p), bins=tuple(bins),
                             mce=mce, ece=ece)


def reliability_export(report: CalibrationReport, path: str | Path) -> None:
    """JSON dump of a calibration report; empty bins carry null statistics."""
    payload = {
        "mode": report.mode,
        "total": report.total,
        "mce": report.mce,
        "ece": report.ece,
        "bins": [
            {
                "lower": b.lower,
                "upper": b.upper,
                "count": b.count,
                "confidence": b.confidence,
                "accuracy": b.accuracy,
            }
            for b in report.bins
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_reliability(path: str | Path) -> CalibrationReport:
    data = json.loads(Path(path).read_text())
    bins = tuple(
        CalibrationBin(b["lower"], b["upper"], b["count"], b["confidence"],
                       b["accuracy"])
        for b in data["bins"]
    )
    return CalibrationReport(mode=data["mode"], total=data["total"], bins=bins,
                             mce=data["mce"], ece=data["ece"])
