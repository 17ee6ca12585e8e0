"""Command-line interface tying the pipeline together.

Subcommands: synth, features, train, predict, eval, rank-features.
Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 training divergence. Flag precedence: flags > --config file > defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import evaluate, ordinal, synth, training
from .data import FeatureParams
from .errors import DivergedLoss, EngageError
from .features import (CLIP_FEATURE_NAMES, clip_feature_matrix,
                       clip_feature_vector, segment_clips, write_clip_features)
from .ingest import load_manifest
from .models import ModelConfig, build_model, save_checkpoint
from .training import TrainConfig

log = logging.getLogger("engage")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3

MODES = ("frame-classify", "frame-ordinal", "clip-regress")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    """Everything a training run needs, serialized into the run directory."""

    mode: str
    manifest: str
    model_config: ModelConfig
    train_config: TrainConfig
    feature_params: FeatureParams = field(default_factory=FeatureParams)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "manifest": self.manifest,
                "model_config": self.model_config.to_dict(),
                "train_config": self.train_config.to_dict(),
                "feature_params": self.feature_params.to_dict()}


def _resolve_manifest(path_str: str) -> Path:
    path = Path(path_str)
    base = os.environ.get("ENGAGE_DATA_DIR")
    if not path.is_absolute() and base and not path.exists():
        return Path(base) / path
    return path


def _add_common(p: _Parser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master random seed")
    p.add_argument("--jobs", type=int, default=None,
                   help="worker threads (default: number of cores)")
    p.add_argument("--config", default=None,
                   help="JSON config file; flags override its values")


def build_parser() -> _Parser:
    parser = _Parser(prog="engage",
                     description="Engagement measurement pipeline",
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--videos-per-class", type=int, default=50)
    p.add_argument("--frames", type=int, default=300)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--label-kind", choices=("ordinal", "continuous"),
                   default="ordinal")
    _add_common(p)

    p = sub.add_parser("features", help="export clip-level feature vectors",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--split", default="all",
                   choices=("all", "train", "validation", "test"))
    p.add_argument("--clip-seconds", type=float, default=None)
    p.add_argument("--overlap", type=float, default=None)
    p.add_argument("--blink-threshold", type=float, default=None)
    _add_common(p)

    p = sub.add_parser("train", help="train a model and write a run directory",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--mode", required=True, choices=MODES)
    p.add_argument("--model", choices=("lstm", "tcn"), default=None)
    p.add_argument("--clip-seconds", type=float, default=None)
    p.add_argument("--overlap", type=float, default=None)
    p.add_argument("--blink-threshold", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--no-balanced", action="store_true",
                   help="disable class-balanced batching")
    p.add_argument("--shared-backbone", action="store_true",
                   help="frame-ordinal: one shared backbone with a "
                        "threshold head instead of independent models")
    p.add_argument("--tcn-levels", type=int, default=None)
    p.add_argument("--tcn-hidden", type=int, default=None)
    p.add_argument("--tcn-kernel", type=int, default=None)
    p.add_argument("--tcn-dropout", type=float, default=None)
    _add_common(p)

    p = sub.add_parser("predict", help="write predictions for one split",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--run", required=True, help="training run directory")
    p.add_argument("--manifest", default=None,
                   help="defaults to the manifest recorded in the run")
    p.add_argument("--split", default="test",
                   choices=("train", "validation", "test"))
    p.add_argument("--out", default=None, help="output CSV path")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a run and write a report",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--run", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default="test",
                   choices=("train", "validation", "test"))
    p.add_argument("--out", default=None, help="report directory")
    _add_common(p)

    p = sub.add_parser("rank-features",
                       help="random-forest OOB importance of clip features",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--trees", type=int, default=500)
    p.add_argument("--blink-threshold", type=float, default=None)
    _add_common(p)

    return parser


def _load_file_config(args) -> dict:
    if getattr(args, "config", None):
        return json.loads(Path(args.config).read_text())
    return {}


def _pick(args, file_cfg: dict, name: str, default):
    """Flag > config file > default."""
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    if name in file_cfg:
        return file_cfg[name]
    return default


def _feature_params(args, file_cfg) -> FeatureParams:
    return FeatureParams(
        clip_seconds=_pick(args, file_cfg, "clip-seconds", 10.0),
        overlap=_pick(args, file_cfg, "overlap", 0.5),
        blink_threshold=_pick(args, file_cfg, "blink-threshold", 0.5),
    )


def _apply_jobs(args) -> None:
    jobs = getattr(args, "jobs", None)
    if jobs:
        import torch
        torch.set_num_threads(max(1, jobs))


def cmd_synth(args) -> int:
    file_cfg = _load_file_config(args)
    kind = {"ordinal": "ordinal_class", "continuous": "continuous"}[args.label_kind]
    config = synth.SynthConfig(
        num_classes=_pick(args, file_cfg, "classes", 4),
        label_kind=kind,
        videos_per_class=_pick(args, file_cfg, "videos-per-class", 50),
        frames_per_video=_pick(args, file_cfg, "frames", 300),
        fps=_pick(args, file_cfg, "fps", 30.0),
        seed=_pick(args, file_cfg, "seed", 7),
    )
    manifest_path = synth.generate(config, args.out)
    print(f"wrote {manifest_path}")
    return EXIT_OK


def cmd_features(args) -> int:
    file_cfg = _load_file_config(args)
    params = _feature_params(args, file_cfg)
    manifest = load_manifest(_resolve_manifest(args.manifest))
    splits = (args.split,) if args.split != "all" else ("train", "validation", "test")

    vids, cidx, labels, rows = [], [], [], []
    for split in splits:
        for series in data_mod.load_split_series(manifest, split):
            mats = clip_feature_matrix(
                series, params.clip_seconds, params.overlap,
                params.blink_threshold, params.min_separation)
            value = (series.label.class_value
                     if series.label.kind == "ordinal_class"
                     else series.label.real_value)
            for i, row in enumerate(mats):
                vids.append(series.video_id)
                cidx.append(i)
                labels.append(value)
                rows.append(row)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_clip_features(args.out, vids, cidx, labels, np.asarray(rows))
    print(f"wrote {args.out} ({len(rows)} clips)")
    return EXIT_OK


def _model_config(args, file_cfg, mode: str, num_classes: int, seed: int) -> ModelConfig:
    backbone = _pick(args, file_cfg, "model", "tcn")
    head = {"frame-classify": "multiclass", "frame-ordinal": "binary",
            "clip-regress": "regression"}[mode]
    data_mode = "frame" if mode.startswith("frame") else "clip"
    return ModelConfig(
        mode=data_mode, backbone=backbone, head=head, num_classes=num_classes,
        tcn_levels=_pick(args, file_cfg, "tcn-levels", 8),
        tcn_hidden=_pick(args, file_cfg, "tcn-hidden", 128),
        tcn_kernel=_pick(args, file_cfg, "tcn-kernel", 16),
        tcn_dropout=_pick(args, file_cfg, "tcn-dropout", 0.25),
        seed=seed,
    )


def cmd_train(args) -> int:
    _apply_jobs(args)
    file_cfg = _load_file_config(args)
    mode = args.mode
    seed = _pick(args, file_cfg, "seed", 0)
    manifest_path = _resolve_manifest(args.manifest)
    manifest = load_manifest(manifest_path)

    if mode in ("frame-classify", "frame-ordinal"):
        if manifest.label_kind != "ordinal_class":
            raise EngageError(f"{mode} needs ordinal_class labels, "
                              f"manifest has {manifest.label_kind}")
    else:
        if manifest.label_kind != "continuous":
            raise EngageError("clip-regress needs continuous labels, "
                              f"manifest has {manifest.label_kind}")

    params = _feature_params(args, file_cfg)
    loss = {"frame-classify": "cross_entropy",
            "frame-ordinal": "binary_cross_entropy",
            "clip-regress": "mean_squared_error"}[mode]
    train_config = TrainConfig(
        batch_size=_pick(args, file_cfg, "batch-size", 32),
        max_epochs=_pick(args, file_cfg, "epochs", 100),
        patience=_pick(args, file_cfg, "patience", 10),
        learning_rate=_pick(args, file_cfg, "lr", 1e-3),
        balanced_batching=not args.no_balanced,
        seed=seed,
        loss=loss,
    )
    model_config = _model_config(args, file_cfg, mode, manifest.num_classes, seed)
    run_config = RunConfig(mode=mode, manifest=str(manifest_path.resolve()),
                           model_config=model_config, train_config=train_config,
                           feature_params=params)

    data_mode = "frame" if mode.startswith("frame") else "clip"
    prepared = data_mod.prepare_data(manifest, data_mode, params)
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)

    if mode == "frame-ordinal":
        om, histories = ordinal.train_ordinal(
            prepared.sequences["train"], prepared.labels["train"],
            prepared.sequences["validation"], prepared.labels["validation"],
            model_config, train_config, normalizer=prepared.normalizer,
            shared_backbone=args.shared_backbone)
        ordinal.save_ordinal(om, run_dir / "checkpoint")
        for i, h in enumerate(histories):
            h.write_csv(run_dir / f"history_threshold_{i}.csv")
        (run_dir / "config.json").write_text(
            json.dumps(run_config.to_dict(), indent=2, sort_keys=True) + "\n")
    else:
        model = build_model(model_config)
        model.normalizer = prepared.normalizer
        class_labels = prepared.batch_classes("train")
        model, history = training.fit(
            model, prepared.sequences["train"], prepared.labels["train"],
            prepared.sequences["validation"], prepared.labels["validation"],
            train_config, class_labels=class_labels)
        save_checkpoint(model, run_dir / "checkpoint",
                        normalizer=prepared.normalizer)
        training.write_run_dir(run_dir, run_config.to_dict(), history)

    print(f"run directory: {run_dir}")
    return EXIT_OK


def _prepared_for_run(args):
    run_dir = Path(args.run)
    doc = evaluate.load_run_report_inputs(run_dir)
    manifest = load_manifest(_resolve_manifest(args.manifest or doc["manifest"]))
    params = FeatureParams.from_dict(doc.get("feature_params", {}))
    data_mode = "frame" if doc["mode"].startswith("frame") else "clip"
    normalizer = data_mod.checkpoint_normalizer(doc["checkpoint_path"])
    prepared = data_mod.prepare_data(manifest, data_mode, params,
                                     normalizer=normalizer)
    return run_dir, doc, prepared


def cmd_predict(args) -> int:
    _apply_jobs(args)
    run_dir, doc, prepared = _prepared_for_run(args)
    preds = data_mod.predict_checkpoint(doc["checkpoint_path"],
                                        prepared.sequences[args.split])
    out = Path(args.out) if args.out else run_dir / f"predictions_{args.split}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as fh:
        if preds.probs is not None:
            n_col = preds.probs.shape[1]
            fh.write("video_id,prediction," +
                     ",".join(f"prob_{c}" for c in range(n_col)) + "\n")
            for vid, v, p in zip(prepared.video_ids[args.split],
                                 preds.values, preds.probs):
                fh.write(f"{vid},{int(v)}," +
                         ",".join("%.6f" % q for q in p) + "\n")
        else:
            fh.write("video_id,prediction\n")
            for vid, v in zip(prepared.video_ids[args.split], preds.values):
                fh.write(f"{vid},%.6f\n" % v)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _apply_jobs(args)
    metrics = evaluate.report(args.run, split=args.split,
                              manifest_path=(_resolve_manifest(args.manifest)
                                             if args.manifest else None),
                              out_dir=args.out)
    for key in ("accuracy", "mse"):
        if key in metrics:
            print(f"{key}: {metrics[key]:.4f}")
    return EXIT_OK


def cmd_rank_features(args) -> int:
    file_cfg = _load_file_config(args)
    blink_threshold = _pick(args, file_cfg, "blink-threshold", 0.5)
    seed = _pick(args, file_cfg, "seed", 0)
    manifest = load_manifest(_resolve_manifest(args.manifest))
    if manifest.label_kind != "ordinal_class":
        raise EngageError("rank-features needs ordinal_class labels")

    rows, labels = [], []
    for split in ("train", "validation", "test"):
        for series in data_mod.load_split_series(manifest, split):
            # One 49-vector per video: the whole video as a single clip.
            clip = segment_clips(series, clip_seconds=len(series) / series.fps,
                                 overlap_fraction=0.0)[0]
            rows.append(clip_feature_vector(clip, series.fps,
                                            blink_threshold=blink_threshold))
            labels.append(series.label.class_value)
    ranking = evaluate.rf_importance(np.asarray(rows), np.asarray(labels),
                                     n_trees=args.trees, seed=seed,
                                     feature_names=CLIP_FEATURE_NAMES)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    ranking.write_csv(args.out)
    evaluate.plot_importance(ranking, Path(args.out).with_suffix(".png"))
    print(f"wrote {args.out}")
    for name, score in ranking.entries[:5]:
        print(f"  {name}: {score:.5f}")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "features": cmd_features,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "rank-features": cmd_rank_features,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except DivergedLoss as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except EngageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
