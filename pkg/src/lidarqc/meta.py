"""Meta models on segment metrics: training, evaluation, serialization.

Two tasks share one interface: `classify` predicts the probability that a
segment is a false positive (adjusted IoU of zero), `regress` predicts the
adjusted IoU itself. Two model kinds are available: boosted trees and a
ridge-regularized linear (logistic for classification) baseline.
Evaluation is grouped cross-validation so frames from one drive never
appear on both sides of a split.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from lidarqc.features import MetaDataset, schema_hash
from lidarqc.gbt import (GbtModel, GbtParams, Tree, fit_gbt, predict_gbt)

TASKS = ("classify", "regress")
KINDS = ("gbt", "linear")

_MODEL_MAGIC = b"LQMM"
_MODEL_VERSION = 1


@dataclass(frozen=True)
class LinearParams:
    ridge: float = 1e-6
    max_iter: int = 200
    tol: float = 1e-8

    def __post_init__(self) -> None:
        if self.ridge < 0:
            raise ValueError("ridge strength must be non-negative")
        if self.tol <= 0:
            raise ValueError("solver tolerance must be positive")


@dataclass
class LinearModel:
    link: str                 # "identity" or "sigmoid"
    weights: np.ndarray       # float64, per standardized feature
    bias: float
    feature_means: np.ndarray
    feature_stds: np.ndarray


@dataclass
class MetaModel:
    """A trained meta model bound to its metric column schema."""

    task: str
    kind: str
    columns: tuple[str, ...]
    payload: GbtModel | LinearModel
    train_loss: list[float] | None = None  # boosted trees only, not serialized


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    stds = np.where(stds == 0.0, 1.0, stds)
    return (X - means) / stds, means, stds


def _fit_linear_regression(X: np.ndarray, y: np.ndarray, params: LinearParams) -> LinearModel:
    Z, means, stds = _standardize(X)
    n_feat = Z.shape[1]
    gram = Z.T @ Z + params.ridge * np.eye(n_feat)
    weights = np.linalg.solve(gram, Z.T @ (y - y.mean()))
    return LinearModel("identity", weights, float(y.mean()), means, stds)


def _fit_logistic(X: np.ndarray, y: np.ndarray, params: LinearParams) -> LinearModel:
    """Newton iterations on the ridge-penalized log-likelihood."""
    Z, means, stds = _standardize(X)
    n_rows, n_feat = Z.shape
    theta = np.zeros(n_feat + 1)
    design = np.column_stack([Z, np.ones(n_rows)])
    penalty = params.ridge * np.eye(n_feat + 1)
    penalty[-1, -1] = 0.0  # intercept stays unpenalized
    for _ in range(params.max_iter):
        p = _sigmoid(design @ theta)
        gradient = design.T @ (p - y) + penalty @ theta
        w = np.maximum(p * (1.0 - p), 1e-10)
        hessian = (design * w[:, None]).T @ design + penalty
        step = np.linalg.solve(hessian, gradient)
        theta -= step
        if np.abs(step).max() < params.tol:
            break
    return LinearModel("sigmoid", theta[:-1], float(theta[-1]), means, stds)


def _predict_linear(model: LinearModel, X: np.ndarray) -> np.ndarray:
    z = (X - model.feature_means) / model.feature_stds
    raw = z @ model.weights + model.bias
    if model.link == "sigmoid":
        return _sigmoid(raw)
    return raw


def _targets(dataset: MetaDataset, task: str) -> np.ndarray:
    if not dataset.has_targets:
        raise ValueError("dataset has no targets")
    if task == "classify":
        return dataset.fp_labels()
    return dataset.iou_adj.astype(np.float64)


def train(dataset: MetaDataset, task: str, kind: str,
          params: GbtParams | LinearParams | None = None) -> MetaModel:
    """Fit a meta model on every row of the dataset."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task}")
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind}")
    y = _targets(dataset, task)
    X = dataset.matrix
    if len(X) < 2:
        raise ValueError("need at least two rows to fit")
    if task == "classify" and len(np.unique(y)) < 2:
        raise ValueError("classification target has a single class")

    loss = None
    if kind == "gbt":
        params = params if params is not None else GbtParams()
        objective = "logistic" if task == "classify" else "squared_error"
        payload, loss = fit_gbt(X, y, objective, params)
    else:
        params = params if params is not None else LinearParams()
        if task == "classify":
            payload = _fit_logistic(X, y, params)
        else:
            payload = _fit_linear_regression(X, y, params)
    return MetaModel(task=task, kind=kind, columns=dataset.columns,
                     payload=payload, train_loss=loss)


def predict(model: MetaModel, dataset: MetaDataset) -> np.ndarray:
    """Score every dataset row; the dataset must carry the model's columns."""
    aligned = dataset.select_columns(model.columns)
    if schema_hash(aligned.columns) != schema_hash(model.columns):
        raise ValueError("metric schema hash mismatch")
    return predict_matrix(model, aligned.matrix)


def predict_matrix(model: MetaModel, X: np.ndarray) -> np.ndarray:
    """Score rows already aligned with the model's columns."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(model.columns):
        raise ValueError("feature matrix does not match the model schema")
    if model.kind == "gbt":
        scores = predict_gbt(model.payload, X)
    else:
        scores = _predict_linear(model.payload, X)
    if model.task == "regress":
        scores = np.clip(scores, 0.0, 1.0)
    return scores


def accuracy(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    """Fraction of correct thresholded decisions."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if len(scores) == 0:
        raise ValueError("no samples")
    if len(scores) != len(labels):
        raise ValueError("scores and labels disagree")
    predicted = scores >= threshold
    return float((predicted == (labels > 0.5)).mean())


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve.

    Computed through tie-aware midranks (the Mann-Whitney statistic), so
    the result equals the pairwise ranking probability with half credit
    for ties, bit for bit: ranks and their sums are exact in floating
    point, leaving a single rounding in the final division.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64) > 0.5
    if len(scores) == 0:
        raise ValueError("no samples")
    pos = int(labels.sum())
    neg = int(len(labels) - pos)
    if pos == 0 or neg == 0:
        raise ValueError("ranking metrics need both classes")
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    lab = labels[order]
    n = len(s)
    boundary = np.nonzero(np.diff(s))[0]
    starts = np.concatenate([[0], boundary + 1])
    ends = np.concatenate([boundary, [n - 1]])
    group_mid = 0.5 * (starts + ends) + 1.0  # average 1-based rank per tie group
    midrank = np.repeat(group_mid, ends - starts + 1)
    u = midrank[lab].sum() - 0.5 * pos * (pos + 1)
    return float(u / (pos * neg))


def auprc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the precision-recall curve, interpolation-free.

    Summation of precision times recall increments over descending score
    thresholds; the positive class is the false-positive flag.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64) > 0.5
    if len(scores) == 0:
        raise ValueError("no samples")
    pos = int(labels.sum())
    if pos == 0:
        raise ValueError("precision-recall needs positive samples")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    boundary = np.nonzero(np.diff(sorted_scores))[0]
    ends = np.concatenate([boundary, [len(scores) - 1]])
    tp = np.cumsum(sorted_labels)[ends]
    precision = tp / (ends + 1.0)
    recall = tp / pos
    return float(np.sum(np.diff(np.concatenate([[0.0], recall])) * precision))


def r2(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Coefficient of determination; zero-variance targets score 0."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(predictions) == 0:
        raise ValueError("no samples")
    if len(predictions) != len(targets):
        raise ValueError("predictions and targets disagree")
    ss_tot = float(((targets - targets.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return 0.0
    ss_res = float(((targets - predictions) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def _metric_set(task: str) -> tuple[str, ...]:
    return ("acc", "auroc", "auprc") if task == "classify" else ("r2",)


def _evaluate(task: str, scores: np.ndarray, y: np.ndarray) -> dict[str, float]:
    if task == "classify":
        return {
            "acc": accuracy(scores, y),
            "auroc": auroc(scores, y),
            "auprc": auprc(scores, y),
        }
    return {"r2": r2(scores, y)}


@dataclass
class EvalReport:
    """Per-metric fold statistics for training and validation splits."""

    task: str
    kind: str
    folds: int
    metrics: dict  # metric -> {"train"|"validation" -> {per_fold, mean, std}}

    def to_json(self) -> str:
        return json.dumps(
            {"task": self.task, "kind": self.kind, "folds": self.folds,
             "metrics": self.metrics},
            indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        data = json.loads(text)
        return cls(task=data["task"], kind=data["kind"], folds=data["folds"],
                   metrics=data["metrics"])


def assign_folds(group_keys: np.ndarray, folds: int, seed: int = 0) -> np.ndarray:
    """Fold index per row; whole groups go to one fold.

    Groups are shuffled deterministically by the seed, then dealt
    round-robin, so with as many groups as folds each fold is exactly one
    group.
    """
    groups = np.unique(group_keys)
    if len(groups) < folds:
        raise ValueError(f"{len(groups)} groups cannot fill {folds} folds")
    rng = np.random.default_rng(seed)
    shuffled = groups[rng.permutation(len(groups))]
    fold_of = {g: i % folds for i, g in enumerate(shuffled)}
    return np.array([fold_of[g] for g in group_keys], dtype=np.int64)


def cross_validate(dataset: MetaDataset, task: str, kind: str,
                   params: GbtParams | LinearParams | None = None,
                   folds: int = 10, seed: int = 0) -> EvalReport:
    """Grouped k-fold evaluation; reports mean and spread per metric."""
    fold_idx = assign_folds(dataset.group_keys, folds, seed)
    y = _targets(dataset, task)
    names = _metric_set(task)
    per_fold = {m: {"train": [], "validation": []} for m in names}
    for fold in range(folds):
        val = fold_idx == fold
        tr = ~val
        sub_train = _dataset_rows(dataset, tr)
        model = train(sub_train, task, kind, params)
        train_scores = predict_matrix(model, dataset.matrix[tr])
        val_scores = predict_matrix(model, dataset.matrix[val])
        for m, v in _evaluate(task, train_scores, y[tr]).items():
            per_fold[m]["train"].append(v)
        for m, v in _evaluate(task, val_scores, y[val]).items():
            per_fold[m]["validation"].append(v)
    metrics = {}
    for m in names:
        metrics[m] = {}
        for split in ("train", "validation"):
            values = per_fold[m][split]
            metrics[m][split] = {
                "per_fold": values,
                "mean": float(np.mean(values)),
                "std": float(np.std(values)),
            }
    return EvalReport(task=task, kind=kind, folds=folds, metrics=metrics)


def _dataset_rows(dataset: MetaDataset, keep: np.ndarray) -> MetaDataset:
    return replace(
        dataset,
        matrix=dataset.matrix[keep],
        frame_ids=dataset.frame_ids[keep],
        group_keys=dataset.group_keys[keep],
        seg_ids=dataset.seg_ids[keep],
        class_ids=dataset.class_ids[keep],
        size_points=dataset.size_points[keep],
        iou=dataset.iou[keep] if dataset.iou is not None else None,
        iou_adj=dataset.iou_adj[keep] if dataset.iou_adj is not None else None,
    )


def save_model(path: str | Path, model: MetaModel) -> None:
    """Versioned binary model file; predictions survive a round trip bit-exactly."""
    parts = [
        _MODEL_MAGIC,
        struct.pack("<HBB", _MODEL_VERSION, TASKS.index(model.task),
                    KINDS.index(model.kind)),
        struct.pack("<I", len(model.columns)),
    ]
    blob = "\n".join(model.columns).encode()
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    parts.append(schema_hash(model.columns))
    if model.kind == "gbt":
        payload: GbtModel = model.payload
        parts.append(struct.pack("<BddI", 1 if payload.objective == "logistic" else 0,
                                 payload.base_score, payload.learning_rate,
                                 len(payload.trees)))
        for tree in payload.trees:
            parts.append(struct.pack("<I", len(tree.feature)))
            parts.append(tree.feature.astype("<i4").tobytes())
            parts.append(tree.threshold.astype("<f8").tobytes())
            parts.append(tree.left.astype("<i4").tobytes())
            parts.append(tree.right.astype("<i4").tobytes())
            parts.append(tree.value.astype("<f8").tobytes())
    else:
        payload: LinearModel = model.payload
        parts.append(struct.pack("<Bd", 1 if payload.link == "sigmoid" else 0,
                                 payload.bias))
        for arr in (payload.weights, payload.feature_means, payload.feature_stds):
            parts.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path: str | Path) -> MetaModel:
    buf = memoryview(Path(path).read_bytes())
    if bytes(buf[:4]) != _MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file")
    version, task_idx, kind_idx = struct.unpack_from("<HBB", buf, 4)
    if version != _MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    (n_cols,) = struct.unpack_from("<I", buf, 8)
    (blob_len,) = struct.unpack_from("<I", buf, 12)
    offset = 16
    columns = tuple(bytes(buf[offset:offset + blob_len]).decode().split("\n"))
    offset += blob_len
    if len(columns) != n_cols:
        raise ValueError(f"{path}: column table is corrupt")
    stored_hash = bytes(buf[offset:offset + 16])
    offset += 16
    if stored_hash != schema_hash(columns):
        raise ValueError(f"{path}: schema hash mismatch")
    task = TASKS[task_idx]
    kind = KINDS[kind_idx]

    def take(dtype, count):
        nonlocal offset
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).copy()
        offset += arr.nbytes
        return arr

    if kind == "gbt":
        objective_flag, base, lr, n_trees = struct.unpack_from("<BddI", buf, offset)
        offset += struct.calcsize("<BddI")
        trees = []
        for _ in range(n_trees):
            (n_nodes,) = struct.unpack_from("<I", buf, offset)
            offset += 4
            trees.append(Tree(
                feature=take("<i4", n_nodes),
                threshold=take("<f8", n_nodes),
                left=take("<i4", n_nodes),
                right=take("<i4", n_nodes),
                value=take("<f8", n_nodes),
            ))
        payload = GbtModel(
            objective="logistic" if objective_flag else "squared_error",
            base_score=base, learning_rate=lr, trees=trees)
    else:
        link_flag, bias = struct.unpack_from("<Bd", buf, offset)
        offset += struct.calcsize("<Bd")
        payload = LinearModel(
            link="sigmoid" if link_flag else "identity",
            weights=take("<f8", n_cols),
            bias=bias,
            feature_means=take("<f8", n_cols),
            feature_stds=take("<f8", n_cols),
        )
    return MetaModel(task=task, kind=kind, columns=columns, payload=payload)
