"""Evaluation: accuracy, MSE, confusion matrices, and random-forest
out-of-bag permutation feature importance for the clip-level features."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.tree import DecisionTreeClassifier

from .errors import LengthMismatch, MissingCheckpoint, OutOfRange, TooFewSamples
from .features import CLIP_FEATURE_NAMES, N_CLIP_FEATURES


def accuracy(predictions, labels) -> float:
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if len(p) != len(y) or len(p) == 0:
        raise LengthMismatch(f"{len(p)} predictions vs {len(y)} labels")
    return float((p == y).mean())


def mse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if len(p) != len(t) or len(p) == 0:
        raise LengthMismatch(f"{len(p)} predictions vs {len(t)} targets")
    return float(np.mean((p - t) ** 2))


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (C, C), rows = true class, columns = predicted

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total)

    @property
    def per_class_recall(self) -> np.ndarray:
        support = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore"):
            recall = np.diag(self.counts) / support
        return np.where(support > 0, recall, 0.0)

    def to_text(self) -> str:
        c = self.counts.shape[0]
        width = max(6, len(str(self.counts.max())) + 2)
        lines = ["true\\pred" + "".join(f"{j:>{width}}" for j in range(c))]
        for i in range(c):
            lines.append(f"{i:>9}" + "".join(
                f"{self.counts[i, j]:>{width}}" for j in range(c)))
        return "\n".join(lines) + "\n"


def confusion(predictions, labels, num_classes: int) -> ConfusionMatrix:
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if len(p) != len(y) or len(p) == 0:
        raise LengthMismatch(f"{len(p)} predictions vs {len(y)} labels")
    if p.min() < 0 or p.max() >= num_classes or y.min() < 0 or y.max() >= num_classes:
        raise OutOfRange(f"classes outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (y, p), 1)
    return ConfusionMatrix(counts=counts)


@dataclass
class ImportanceRanking:
    """Features ordered by decreasing mean out-of-bag error increase."""

    entries: list[tuple[str, float]]

    def rank_of(self, name: str) -> int:
        for i, (n, _) in enumerate(self.entries):
            if n == name:
                return i
        raise KeyError(name)

    def score_of(self, name: str) -> float:
        return self.entries[self.rank_of(name)][1]

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("rank,feature,importance\n")
            for i, (name, score) in enumerate(self.entries):
                fh.write(f"{i},{name},{score:.8f}\n")


def rf_importance(features: np.ndarray, labels, n_trees: int = 500,
                  seed: int = 0, feature_names=None) -> ImportanceRanking:
    """Permutation importance measured on each tree's out-of-bag samples.

    For every bootstrap-trained tree, the error on its out-of-bag rows is
    compared with the error after permuting one feature's out-of-bag values;
    a feature's importance is the mean error increase over all trees.
    Deterministic for a given seed.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2:
        raise TooFewSamples("feature table must be 2-d")
    n, d = x.shape
    if n < 20:
        raise TooFewSamples(f"need >= 20 samples, got {n}")
    if len(y) != n:
        raise LengthMismatch(f"{n} rows vs {len(y)} labels")
    if feature_names is None:
        feature_names = (CLIP_FEATURE_NAMES if d == N_CLIP_FEATURES
                         else tuple(f"f{i:02d}" for i in range(d)))

    max_features = min(d, max(1, int(round(np.sqrt(d)))))
    deltas = np.zeros(d, dtype=np.float64)
    used_trees = 0
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        bootstrap = rng.integers(0, n, size=n)
        oob = np.setdiff1d(np.arange(n), bootstrap)
        if len(oob) == 0:
            continue
        tree = DecisionTreeClassifier(
            max_features=max_features,
            random_state=int(rng.integers(2 ** 31 - 1)),
        ).fit(x[bootstrap], y[bootstrap])

        x_oob = x[oob]
        y_oob = y[oob]
        # One stacked predict call: original rows plus d permuted variants.
        stacked = np.tile(x_oob, (d + 1, 1))
        m = len(oob)
        for j in range(d):
            block = stacked[(j + 1) * m:(j + 2) * m]
            block[:, j] = x_oob[rng.permutation(m), j]
        pred = tree.predict(stacked)
        errs = (pred != np.tile(y_oob, d + 1)).reshape(d + 1, m).mean(axis=1)
        deltas += errs[1:] - errs[0]
        used_trees += 1

    scores = deltas / max(1, used_trees)
    order = sorted(range(d), key=lambda j: (-scores[j], j))
    return ImportanceRanking(entries=[(feature_names[j], float(scores[j]))
                                      for j in order])


def write_report(out_dir, metrics: dict, matrix: ConfusionMatrix | None = None,
                 importance: ImportanceRanking | None = None) -> dict:
    """Emit an evaluation report directory; returns the metrics document.

    metrics.json holds scalar metrics (and per-class recall when a confusion
    matrix is present); confusion.txt is a plain-text table. An importance
    bar chart is written when matplotlib is importable.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = dict(metrics)
    if matrix is not None:
        doc["accuracy"] = matrix.accuracy
        doc["per_class_recall"] = [float(r) for r in matrix.per_class_recall]
        doc["confusion"] = matrix.counts.tolist()
        (out_dir / "confusion.txt").write_text(matrix.to_text())
    (out_dir / "metrics.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if importance is not None:
        importance.write_csv(out_dir / "importance.csv")
        plot_importance(importance, out_dir / "importance.png")
    return doc


def plot_importance(importance: ImportanceRanking, path) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    names = [n for n, _ in importance.entries]
    scores = [s for _, s in importance.entries]
    pos = range(len(names))
    fig, ax = plt.subplots(figsize=(8, max(4, 0.18 * len(names))))
    ax.barh(pos, scores[::-1])
    ax.set_yticks(pos)
    ax.set_yticklabels(names[::-1], fontsize=6)
    ax.set_xlabel("mean OOB error increase")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def load_run_report_inputs(run_dir) -> dict:
    """Read a training run's config snapshot; checks the checkpoint exists."""
    run_dir = Path(run_dir)
    config_path = run_dir / "config.json"
    if not config_path.is_file():
        raise MissingCheckpoint(f"{run_dir}: missing config.json")
    doc = json.loads(config_path.read_text())
    ckpt = run_dir / "checkpoint"
    if not ckpt.is_dir():
        raise MissingCheckpoint(f"{run_dir}: missing checkpoint directory")
    doc["checkpoint_path"] = str(ckpt)
    return doc


def report(run_dir, split: str = "test", manifest_path=None,
           out_dir=None) -> dict:
    """Evaluate a training run on one split and write its report directory.

    Classification runs get accuracy, a confusion matrix, and per-class
    recall; regression runs get MSE. Deterministic: identical inputs produce
    byte-identical metric files.
    """
    from .data import (FeatureParams, checkpoint_normalizer, predict_checkpoint,
                       prepare_data)
    from .ingest import load_manifest

    run_dir = Path(run_dir)
    doc = load_run_report_inputs(run_dir)
    manifest = load_manifest(manifest_path or doc["manifest"])
    params = FeatureParams.from_dict(doc.get("feature_params", {}))
    data_mode = "frame" if doc["mode"].startswith("frame") else "clip"
    normalizer = checkpoint_normalizer(doc["checkpoint_path"])
    data = prepare_data(manifest, data_mode, params, normalizer=normalizer)

    preds = predict_checkpoint(doc["checkpoint_path"], data.sequences[split])
    metrics: dict = {"split": split, "mode": doc["mode"],
                     "n_samples": int(len(data.labels[split]))}
    matrix = None
    if preds.kind == "class":
        matrix = confusion(preds.values, data.labels[split],
                           num_classes=data.num_classes)
    else:
        metrics["mse"] = mse(preds.values, data.labels[split])
    out_dir = Path(out_dir) if out_dir is not None else run_dir / "report" / split
    return write_report(out_dir, metrics, matrix=matrix)
