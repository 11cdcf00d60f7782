"""Command-line entry point: dataset synthesis, click simulation, training,
inference, evaluation, gradient checking, and ablation sweeps."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import torch

from . import clicks as clicks_mod
from . import evaluation, inference
from .data import (
    DatasetManifest,
    VideoEntry,
    atomic_write_json,
    atomic_write_text,
    ground_truth_by_class,
    load_annotation,
    load_dataset,
    load_manifest,
    save_annotation,
    save_manifest,
)
from .network import load_checkpoint
from .trainer import TrainConfig, gradcheck, train


def _args_dict(args) -> dict:
    out = {}
    for key, value in vars(args).items():
        if key == "func":
            continue
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


def _write_run_meta(out_dir: Path, command: str, params: dict) -> None:
    atomic_write_json(out_dir / "run_meta.json",
                      {"command": command, "params": params})


def _parse_thresholds(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad threshold list {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("threshold list is empty")
    return vals


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_m, test_m = clicks_mod.generate_synthetic_dataset(
        out, n_train=args.n_train, n_test=args.n_test, n_classes=args.classes,
        d_in=args.d_in, t_fixed=args.t_fixed, sigma=args.sigma,
        rng_seed=args.seed, duration_sec=args.duration)
    _write_run_meta(out, "synth", _args_dict(args))
    print(f"wrote {train_m} and {test_m}")
    return 0


def cmd_simulate(args) -> int:
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    entries = []
    master = np.random.SeedSequence(args.seed)
    for entry, seq in zip(manifest.videos, master.spawn(len(manifest.videos))):
        ann = load_annotation(manifest.annotation_file(entry))
        if not ann.segments:
            print(f"error: {entry.video_id} has no ground-truth segments",
                  file=sys.stderr)
            return 1
        seed = int(np.random.default_rng(seq).integers(2**31))
        if args.mode == "background":
            new_ann = clicks_mod.simulate_background_clicks(
                ann.segments, entry.duration_sec, manifest.n_classes,
                rng_seed=seed, video_id=entry.video_id,
                t_fixed=manifest.t_fixed)
        else:
            new_ann = clicks_mod.simulate_action_clicks(
                ann.segments, entry.duration_sec, manifest.n_classes,
                rng_seed=seed, video_id=entry.video_id)
        save_annotation(out / "annotations" / f"{entry.video_id}.json", new_ann)
        feature_rel = os.path.relpath(manifest.feature_file(entry), out)
        entries.append(VideoEntry(
            video_id=entry.video_id, feature_path=feature_rel,
            annotation_path=f"annotations/{entry.video_id}.json",
            duration_sec=entry.duration_sec))
    new_manifest = DatasetManifest(class_names=manifest.class_names,
                                   t_fixed=manifest.t_fixed, videos=entries,
                                   root=out)
    save_manifest(out / "manifest.json", new_manifest)
    _write_run_meta(out, "simulate", {
        "manifest": str(args.manifest), "mode": args.mode, "seed": args.seed})
    print(f"wrote {out / 'manifest.json'}")
    return 0


def cmd_train(args) -> int:
    cfg_obj = json.loads(Path(args.config).read_text())
    manifest_path = cfg_obj.pop("manifest", None)
    out_dir = cfg_obj.pop("out_dir", None)
    if args.manifest:
        manifest_path = args.manifest
    if args.out:
        out_dir = args.out
    if not manifest_path or not out_dir:
        print("error: manifest and output dir must come from the config file "
              "or --manifest/--out", file=sys.stderr)
        return 1
    cfg = TrainConfig.from_json_obj(cfg_obj)
    manifest = load_manifest(manifest_path)
    out = Path(out_dir)
    result = train(cfg, manifest, out)
    _write_run_meta(out, "train", {
        "config": cfg.to_json_obj(), "manifest": str(manifest_path),
        "seed": cfg.seed})
    print(f"trained {result.iterations} iterations, final loss "
          f"{result.final_loss:.6f}; checkpoint at {result.checkpoint_path}")
    return 0


def cmd_infer(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    if manifest.t_fixed != meta["t_fixed"]:
        print(f"error: manifest t_fixed={manifest.t_fixed} != checkpoint "
              f"t_fixed={meta['t_fixed']}", file=sys.stderr)
        return 1
    videos = load_dataset(manifest)
    k = max(1, int(args.k_ratio * manifest.t_fixed))
    thresholds = args.thresholds or inference.DEFAULT_SEG_THRESHOLDS

    def run(v):
        dets = inference.localize(
            model, v.features, v.duration_sec, k, tau_cls=args.tau_cls,
            seg_thresholds=thresholds, nms_tiou=args.nms_tiou,
            inflation=args.inflation, use_affinity=not args.no_affinity,
            branch=args.branch)
        return inference.predictions_to_json_obj(v.video_id, dets)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            per_video = list(pool.map(run, videos))
    else:
        per_video = [run(v) for v in videos]
    preds = [p for chunk in per_video for p in chunk]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_json(out, preds)
    print(f"wrote {len(preds)} detections to {out}")
    return 0


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    preds = inference.load_predictions(args.preds)
    table = evaluation.map_at(
        evaluation.predictions_by_class(preds),
        ground_truth_by_class(manifest),
        args.thresholds)
    csv_text = table.to_csv(manifest.class_names)
    if args.out_csv:
        Path(args.out_csv).parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(Path(args.out_csv), csv_text)
    if args.out_json:
        Path(args.out_json).parent.mkdir(parents=True, exist_ok=True)
        atomic_write_json(Path(args.out_json), table.to_json_obj())
    sys.stdout.write(csv_text)
    return 0


def cmd_gradcheck(args) -> int:
    report = gradcheck(n_instances=args.instances, seed=args.seed,
                       step=args.step, tol=args.tol)
    for line in report.summary_lines():
        print(line)
    return 0 if report.passed else 1


def cmd_ablate(args) -> int:
    grid = json.loads(Path(args.grid).read_text())
    base = grid.get("base_config", {})
    rows = grid["rows"]
    train_manifest = load_manifest(grid["train_manifest"])
    test_manifest = load_manifest(grid["test_manifest"])
    thresholds = tuple(grid.get("eval_thresholds", [0.5]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["name," + ",".join(f"map@{t:g}" for t in thresholds) + ",avg_map"]
    for row in rows:
        name = row["name"]
        cfg = TrainConfig.from_json_obj({**base, **row.get("overrides", {})})
        run_dir = out / name
        result = train(cfg, train_manifest, run_dir)
        model, meta = load_checkpoint(result.checkpoint_path)
        k = cfg.k_for(test_manifest.t_fixed)
        branch = "suppressed" if cfg.use_suppression else "base"
        preds = []
        for v in load_dataset(test_manifest):
            dets = inference.localize(model, v.features, v.duration_sec, k,
                                      use_affinity=cfg.use_affinity,
                                      branch=branch)
            preds.extend(inference.predictions_to_json_obj(v.video_id, dets))
        atomic_write_json(run_dir / "predictions.json", preds)
        table = evaluation.map_at(evaluation.predictions_by_class(preds),
                                  ground_truth_by_class(test_manifest),
                                  thresholds)
        cells = [name] + [f"{table.map_at[t]:.6f}" for t in thresholds]
        cells.append(f"{table.avg_map:.6f}")
        lines.append(",".join(cells))
        print(lines[-1])
    atomic_write_text(out / "ablation_results.csv", "\n".join(lines) + "\n")
    _write_run_meta(out, "ablate", {"grid": str(args.grid)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bgtal",
        description="Background-click supervised temporal action localization "
                    "on precomputed feature sequences.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic train/test dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--n-train", type=int, default=20, help="training videos")
    p.add_argument("--n-test", type=int, default=10, help="test videos")
    p.add_argument("--classes", type=int, default=3, help="action classes")
    p.add_argument("--d-in", type=int, default=16, help="feature dimension")
    p.add_argument("--t-fixed", type=int, default=128, help="frame grid length")
    p.add_argument("--sigma", type=float, default=0.1, help="feature noise std")
    p.add_argument("--duration", type=float, default=64.0,
                   help="video duration in seconds")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("simulate",
                       help="simulate click annotations from ground truth")
    p.add_argument("--manifest", required=True, help="dataset manifest path")
    p.add_argument("--mode", choices=("background", "action"),
                   default="background", help="click placement mode")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True, help="JSON training config")
    p.add_argument("--manifest", help="override manifest path in config")
    p.add_argument("--out", help="override output dir in config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="localize actions in a dataset")
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--manifest", required=True, help="dataset manifest path")
    p.add_argument("--out", required=True, help="output predictions JSON")
    p.add_argument("--tau-cls", type=float, default=inference.DEFAULT_TAU_CLS,
                   help="video-level class score threshold")
    p.add_argument("--thresholds", type=_parse_thresholds, default=None,
                   help="comma list of segment thresholds")
    p.add_argument("--nms-tiou", type=float, default=inference.DEFAULT_NMS_TIOU,
                   help="NMS tIoU threshold")
    p.add_argument("--inflation", type=float,
                   default=inference.DEFAULT_OIC_INFLATION,
                   help="outer flank length as a fraction of segment length")
    p.add_argument("--k-ratio", type=float, default=0.125,
                   help="top-k fraction of the frame grid")
    p.add_argument("--branch", choices=("suppressed", "base"),
                   default="suppressed", help="which activation stream to read")
    p.add_argument("--no-affinity", action="store_true",
                   help="disable affinity-modulated convolution")
    p.add_argument("--jobs", type=int, default=1, help="parallel videos")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--preds", required=True, help="predictions JSON")
    p.add_argument("--manifest", required=True, help="dataset manifest path")
    p.add_argument("--thresholds", type=_parse_thresholds,
                   default=evaluation.DEFAULT_TIOU_GRID,
                   help="comma list of tIoU thresholds")
    p.add_argument("--out-csv", help="write the mAP table as CSV")
    p.add_argument("--out-json", help="write the summary as JSON")
    p.add_argument("--jobs", type=int, default=1, help="accepted for symmetry")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="verify analytic gradients with finite differences")
    p.add_argument("--instances", type=int, default=20, help="random instances")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--step", type=float, default=1e-5,
                   help="finite difference step")
    p.add_argument("--tol", type=float, default=1e-4,
                   help="max relative error to pass")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run a toggle/hyperparameter sweep")
    p.add_argument("--grid", required=True, help="JSON sweep description")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    torch.set_num_threads(1)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
