"""Command-line entry point.

Subcommands cover the whole workflow: synthesize data, compute segment
metrics, train and evaluate meta models, select metrics greedily,
calibrate, and score unlabeled frames. Every run is deterministic for a
fixed config, so reruns reproduce their outputs byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from lidarqc import analysis, meta, plots
from lidarqc.config import RunConfig, load_config
from lidarqc.core import (argmax_prediction, load_labels, load_pointcloud,
                          load_probabilities, save_labels, save_pointcloud,
                          save_probabilities)
from lidarqc.features import (MetaDataset, build_dataset, read_dataset_binary,
                              read_dataset_csv, write_dataset_binary,
                              write_dataset_csv)
from lidarqc.pipeline import process_frame
from lidarqc.projection import write_grid_csv, write_pgm
from lidarqc.synth import generate_scene, mock_inference


def _substream(master: int, stream: int, index: int) -> int:
    return int(np.random.SeedSequence([master, stream, index]).generate_state(1)[0])


def _write_json(path: str, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _read_manifest(data_dir: str) -> list[dict[str, str]]:
    path = os.path.join(data_dir, "manifest.json")
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    frames = manifest.get("frames")
    if not isinstance(frames, list) or not frames:
        raise ValueError("manifest has no frames")
    for entry in frames:
        if "id" not in entry or "group" not in entry:
            raise ValueError("manifest frame needs an id and a group")
    return frames


def _load_frame(data_dir: str, frame_id: str, cfg: RunConfig,
                want_gt: bool):
    """Load one frame: cloud, probabilities, prediction, optional labels."""
    cloud = load_pointcloud(os.path.join(data_dir, frame_id + ".bin"))
    sidecar_path = os.path.join(data_dir, frame_id + ".prob.json")
    with open(sidecar_path, "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    m, n = int(sidecar["points"]), int(sidecar["classes"])
    if m != len(cloud):
        raise ValueError(f"{frame_id}: sidecar point count does not match")
    probs = load_probabilities(os.path.join(data_dir, frame_id + ".prob"), m, n)
    pred = argmax_prediction(probs)
    gt = None
    label_path = os.path.join(data_dir, frame_id + ".label")
    if want_gt and os.path.exists(label_path):
        class_map = cfg.class_map if cfg.class_map is not None else {
            i: i for i in range(n + 1)}
        gt = load_labels(label_path, m, class_map, n_classes=n)
    return cloud, probs, pred, gt, n


def _overrides(pairs: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ValueError(f"expected key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def _read_dataset(path: str) -> MetaDataset:
    if path.endswith(".lqds"):
        return read_dataset_binary(path)
    return read_dataset_csv(path)


def cmd_synth(args, cfg: RunConfig) -> int:
    os.makedirs(args.out, exist_ok=True)
    spec = cfg.sensor()
    frames = []
    for i in range(cfg.synth_frames):
        frame_id = f"frame_{i:04d}"
        group = f"group_{i * cfg.synth_groups // cfg.synth_frames:02d}"
        scene = cfg.scene(_substream(cfg.seed, 0, i))
        cloud, gt = generate_scene(scene)
        corrupt = cfg.corruption(_substream(cfg.seed, 1, i))
        probs = mock_inference(gt, cloud, spec, cfg.classes, corrupt)
        save_pointcloud(os.path.join(args.out, frame_id + ".bin"), cloud)
        save_labels(os.path.join(args.out, frame_id + ".label"), gt)
        save_probabilities(os.path.join(args.out, frame_id + ".prob"), probs)
        _write_json(os.path.join(args.out, frame_id + ".prob.json"),
                    {"points": len(cloud), "classes": cfg.classes})
        frames.append({"id": frame_id, "group": group})
    _write_json(os.path.join(args.out, "manifest.json"), {"frames": frames})
    print(f"wrote {len(frames)} frames to {args.out}")
    return 0


def cmd_metrics(args, cfg: RunConfig) -> int:
    os.makedirs(args.out, exist_ok=True)
    entries = _read_manifest(args.data)
    want_gt = not args.no_gt
    if want_gt:
        # targets only when every frame has labels, never a mixture
        want_gt = all(os.path.exists(os.path.join(args.data, e["id"] + ".label"))
                      for e in entries)

    results, groups, collisions = [], {}, {}
    class_count = None
    for entry in entries:
        frame_id = entry["id"]
        cloud, probs, pred, gt, n = _load_frame(args.data, frame_id, cfg, want_gt)
        if class_count is None:
            class_count = n
        elif n != class_count:
            raise ValueError("frames disagree on class count")
        result = process_frame(frame_id, cloud, probs, pred, cfg.sensor(),
                               gt=gt, wrap=cfg.wrap)
        results.append(result)
        groups[frame_id] = entry["group"]
        collisions[frame_id] = result.grids.collision_count
        if args.dump_heatmaps:
            heat_dir = os.path.join(args.out, "heatmaps")
            os.makedirs(heat_dir, exist_ok=True)
            for hm in result.heatmaps:
                stem = os.path.join(heat_dir, f"{frame_id}_{hm.name}")
                write_pgm(stem + ".pgm", hm.values)
                write_grid_csv(stem + ".csv", hm.values)

    dataset = build_dataset([r.features for r in results], groups,
                            sp_min=cfg.sp_min)
    write_dataset_csv(os.path.join(args.out, "dataset.csv"), dataset)
    write_dataset_binary(os.path.join(args.out, "dataset.lqds"), dataset)
    summary = {
        "frames": len(results),
        "segments_total": int(sum(len(r.segments) for r in results)),
        "rows_kept": dataset.row_count,
        "retained_point_fraction": dataset.retained_point_fraction,
        "has_targets": dataset.has_targets,
        "collisions": collisions,
    }
    _write_json(os.path.join(args.out, "metrics_summary.json"), summary)
    print(f"dataset: {dataset.row_count} segments from {len(results)} frames "
          f"(retained point fraction {dataset.retained_point_fraction:.4f})")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    dataset = _read_dataset(args.dataset)
    task = args.task or cfg.task
    kind = args.kind or cfg.kind
    params = cfg.gbt_params() if kind == "gbt" else cfg.linear_params()
    model = meta.train(dataset, task, kind, params=params)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    meta.save_model(args.out, model)
    loss = ("" if not model.train_loss
            else f", final loss {model.train_loss[-1]:.6f}")
    print(f"trained {task}/{kind} on {dataset.row_count} rows{loss}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    os.makedirs(args.out, exist_ok=True)
    dataset = _read_dataset(args.dataset)
    task = args.task or cfg.task
    kind = args.kind or cfg.kind
    params = cfg.gbt_params() if kind == "gbt" else cfg.linear_params()
    report = meta.cross_validate(dataset, task, kind, params=params,
                                 folds=cfg.folds, seed=cfg.seed)
    with open(os.path.join(args.out, "eval_report.json"), "w",
              encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    with open(os.path.join(args.out, "eval_metrics.csv"), "w",
              encoding="utf-8", newline="") as fh:
        fh.write("metric,split,fold,value\n")
        for metric, splits in report.metrics.items():
            for split, stats in splits.items():
                for i, value in enumerate(stats["per_fold"]):
                    fh.write(f"{metric},{split},{i},{value!r}\n")
                fh.write(f"{metric},{split},mean,{stats['mean']!r}\n")
                fh.write(f"{metric},{split},std,{stats['std']!r}\n")

    # refit on everything for the report figure
    model = meta.train(dataset, task, kind, params=params)
    scores = meta.predict(model, dataset)
    if task == "classify":
        plots.score_histogram(scores, dataset.fp_labels().astype(np.int32),
                              os.path.join(args.out, "scores.png"))
    else:
        plots.scatter_true_pred(dataset.iou_adj, scores,
                                os.path.join(args.out, "regression.png"))
    headline = "acc" if task == "classify" else "r2"
    mean = report.metrics[headline]["validation"]["mean"]
    print(f"{task}/{kind} {cfg.folds}-fold validation {headline}: {mean:.4f}")
    return 0


def cmd_select(args, cfg: RunConfig) -> int:
    os.makedirs(args.out, exist_ok=True)
    dataset = _read_dataset(args.dataset)
    task = args.task or cfg.task
    kind = args.kind or cfg.kind
    params = cfg.gbt_params() if kind == "gbt" else cfg.linear_params()
    trace = analysis.greedy_select(dataset, task, kind, params=params,
                                   max_metrics=args.max_metrics,
                                   folds=cfg.folds, seed=cfg.seed)
    payload = {
        "task": trace.task,
        "objective": trace.objective_name,
        "steps": [{"step": i, "added_metric": s.metric, "objective": s.objective}
                  for i, s in enumerate(trace.steps, start=1)],
    }
    _write_json(os.path.join(args.out, "selection.json"), payload)
    analysis.write_selection_csv(os.path.join(args.out, "selection.csv"), trace)
    plots.selection_curve(trace, os.path.join(args.out, "selection.png"))
    best = trace.steps[-1]
    print(f"selected {len(trace.steps)} metrics, "
          f"{trace.objective_name}={best.objective:.4f}")
    return 0


def cmd_calibrate(args, cfg: RunConfig) -> int:
    os.makedirs(args.out, exist_ok=True)
    dataset = _read_dataset(args.dataset)
    model = meta.load_model(args.model)
    if model.task != "classify":
        raise ValueError("calibration needs a classifier")
    probs = meta.predict(model, dataset)
    labels = dataset.fp_labels().astype(np.int32)
    report = analysis.calibration(probs, labels, mode=args.mode)
    analysis.reliability_export(report, os.path.join(args.out, "reliability.json"))
    with open(os.path.join(args.out, "reliability.csv"), "w",
              encoding="utf-8", newline="") as fh:
        fh.write("bin,lower,upper,count,confidence,accuracy\n")
        for i, b in enumerate(report.bins):
            conf = "" if b.confidence is None else repr(b.confidence)
            acc = "" if b.accuracy is None else repr(b.accuracy)
            fh.write(f"{i},{b.lower!r},{b.upper!r},{b.count},{conf},{acc}\n")
    plots.reliability_diagram(report, os.path.join(args.out, "reliability.png"))
    print(f"calibration ({report.mode}): ECE={report.ece:.4f} MCE={report.mce:.4f}")
    return 0


def cmd_infer(args, cfg: RunConfig) -> int:
    os.makedirs(args.out, exist_ok=True)
    classifier = meta.load_model(args.classifier)
    regressor = meta.load_model(args.regressor)
    if classifier.task != "classify":
        raise ValueError("--classifier must hold a classification model")
    if regressor.task != "regress":
        raise ValueError("--regressor must hold a regression model")

    entries = _read_manifest(args.data)
    scored = excluded = 0
    for entry in entries:
        frame_id = entry["id"]
        cloud, probs, pred, _, _ = _load_frame(args.data, frame_id, cfg,
                                               want_gt=False)
        result = process_frame(frame_id, cloud, probs, pred, cfg.sensor(),
                               wrap=cfg.wrap)
        feats = result.features
        keep = feats.size_points >= cfg.sp_min
        fp_scores = np.full(len(feats.seg_ids), -1.0)
        iou_scores = np.full(len(feats.seg_ids), -1.0)
        if keep.any():
            kept = MetaDataset(
                columns=feats.columns,
                matrix=feats.metrics[keep],
                frame_ids=np.array([frame_id] * int(keep.sum()), dtype="U32"),
                group_keys=np.array([entry["group"]] * int(keep.sum()),
                                    dtype="U32"),
                seg_ids=feats.seg_ids[keep],
                class_ids=feats.class_ids[keep],
                size_points=feats.size_points[keep],
                iou=None, iou_adj=None,
                retained_point_fraction=float("nan"))
            fp_scores[keep] = meta.predict(classifier, kept)
            iou_scores[keep] = meta.predict(regressor, kept)
        scored += int(keep.sum())
        excluded += int((~keep).sum())

        csv_path = os.path.join(args.out, frame_id + ".segquality.csv")
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write("segment,class,size_points,fp_score,iou_adj_pred\n")
            for i, seg_id in enumerate(feats.seg_ids):
                fh.write(f"{seg_id},{feats.class_ids[i]},"
                         f"{feats.size_points[i]},{float(fp_scores[i])!r},"
                         f"{float(iou_scores[i])!r}\n")

        # per-point quality through the pixel ownership of each segment
        grids = result.grids
        quality = np.full(grids.height * grids.width, -1.0)
        for i, seg in enumerate(result.segments):
            quality[seg.pixels] = iou_scores[i]
        per_point = quality.reshape(grids.height, grids.width)[
            grids.point_rows, grids.point_cols].astype(np.float32)
        per_point.tofile(os.path.join(args.out, frame_id + ".quality.bin"))

    _write_json(os.path.join(args.out, "infer_summary.json"),
                {"frames": len(entries), "segments_scored": scored,
                 "segments_excluded": excluded, "sp_min": cfg.sp_min})
    print(f"scored {scored} segments over {len(entries)} frames "
          f"({excluded} below the size floor)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lidarqc",
        description="segment-level quality estimation for LiDAR semantic "
                    "segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("metrics", help="project frames and build the "
                                       "segment metric dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-gt", action="store_true",
                   help="ignore label files even if present")
    p.add_argument("--dump-heatmaps", action="store_true",
                   help="write per-frame dispersion grids as PGM and CSV")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("train", help="train a meta model")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=meta.TASKS)
    p.add_argument("--kind", choices=meta.KINDS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="grouped cross-validation report")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=meta.TASKS)
    p.add_argument("--kind", choices=meta.KINDS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("select", help="greedy forward metric selection")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=meta.TASKS)
    p.add_argument("--kind", choices=meta.KINDS)
    p.add_argument("--max-metrics", type=int)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("calibrate", help="reliability analysis of a classifier")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("predicted_class", "raw"),
                   default="predicted_class")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("infer", help="score unlabeled frames with trained "
                                     "models")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--regressor", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args.overrides))
        return args.func(args, cfg)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
