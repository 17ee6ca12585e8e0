"""Ordinal classification via threshold decomposition.

A C-class ordinal problem becomes C-1 binary problems: threshold model i
learns p(y <= i). At inference the binary estimates are converted to
exceedance probabilities p(y > i) and recombined into a C-class
distribution by telescoping differences.

The default trains C-1 fully independent binary models; a shared-backbone
variant (one model with a C-1-logit threshold head) is available behind a
flag but is not the default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .errors import (
    CorruptCheckpoint,
    InputOutOfRange,
    InvalidConfig,
    OutOfRange,
    VersionMismatch,
)
from .features import Normalizer
from .models import (
    CHECKPOINT_FORMAT,
    EngagementModel,
    ModelConfig,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from .training import TrainConfig, TrainHistory, fit, predict_outputs


def decompose_label(y: int, num_classes: int) -> np.ndarray:
    """Binary threshold targets: bit i = 1 iff y <= i (length C-1, monotone)."""
    if num_classes < 2:
        raise OutOfRange(f"num_classes must be >= 2, got {num_classes}")
    if not 0 <= y < num_classes:
        raise OutOfRange(f"label {y} outside [0, {num_classes})")
    thresholds = np.arange(num_classes - 1)
    return (y <= thresholds).astype(np.int64)


def decode_bits(bits) -> int:
    """Inverse of decompose_label: count of zeros before the first one."""
    bits = np.asarray(bits)
    ones = np.flatnonzero(bits == 1)
    return int(ones[0]) if len(ones) else len(bits)


@dataclass(frozen=True)
class RecombinedProbs:
    raw: np.ndarray        # signed masses, sum exactly 1 (telescoping)
    reported: np.ndarray   # raw clipped at 0 and renormalized
    predicted_class: int


def recombine(exceed_probs) -> RecombinedProbs:
    """Telescoping recombination of exceedance probabilities p(y > i).

    raw[0] = 1 - e[0]; raw[k] = e[k-1] - e[k]; raw[C-1] = e[C-2]. Raw masses
    can be negative when the inputs are non-monotone; they are kept for the
    argmax (ties resolve to the lower class) and clipped only for reporting.
    """
    e = np.asarray(exceed_probs, dtype=np.float64).reshape(-1)
    if len(e) < 1:
        raise InputOutOfRange("need at least one exceedance probability")
    if np.any(e < 0.0) or np.any(e > 1.0):
        raise InputOutOfRange(f"exceedance probabilities outside [0, 1]: {e}")

    num_classes = len(e) + 1
    raw = np.empty(num_classes, dtype=np.float64)
    raw[0] = 1.0 - e[0]
    raw[1:-1] = e[:-1] - e[1:]
    raw[-1] = e[-1]

    predicted = int(np.argmax(raw))  # first max -> lower class on ties
    reported = np.clip(raw, 0.0, None)
    reported = reported / reported.sum()
    return RecombinedProbs(raw=raw, reported=reported, predicted_class=predicted)


@dataclass
class OrdinalModel:
    """C-1 threshold binary models (or one shared-backbone threshold model)
    behind a single predict interface, sharing one input layout and
    normalizer."""

    num_classes: int
    models: list[EngagementModel] | None = None
    shared: EngagementModel | None = None
    normalizer: Normalizer | None = None

    def __post_init__(self):
        if (self.shared is None) == (self.models is None):
            raise InvalidConfig("set exactly one of models / shared")
        if self.shared is not None:
            if self.shared.config.output_dim != self.num_classes - 1:
                raise InvalidConfig("shared model must emit C-1 logits")
            return
        if len(self.models) != self.num_classes - 1:
            raise InvalidConfig(
                f"need {self.num_classes - 1} threshold models, "
                f"got {len(self.models)}")
        layouts = {m.config.feature_layout for m in self.models}
        if len(layouts) > 1:
            raise InvalidConfig(f"threshold models mix layouts {layouts}")


def train_ordinal(train_sequences, train_labels, val_sequences, val_labels,
                  base_config: ModelConfig, train_config: TrainConfig,
                  normalizer: Normalizer | None = None,
                  shared_backbone: bool = False,
                  ) -> tuple[OrdinalModel, list[TrainHistory]]:
    """Train the threshold models for a C-class ordinal problem.

    Default: C-1 independent binary models, threshold i trained on the full
    training set with targets ``decompose_label(y)[i]`` and seeds offset by
    i. With ``shared_backbone=True`` a single model with a (C-1)-logit
    threshold head is trained jointly on all bits. Balanced batching uses
    the original C-class labels so every engagement level appears in every
    batch.
    """
    labels = np.asarray(train_labels, dtype=np.int64)
    val_y = np.asarray(val_labels, dtype=np.int64)
    num_classes = int(base_config.num_classes)
    if num_classes < 3:
        raise InvalidConfig(
            "ordinal training needs >= 3 classes; use a plain binary model")

    if shared_backbone:
        cfg = replace(base_config, head="thresholds")
        tcfg = replace(train_config, loss="binary_cross_entropy")
        model = build_model(cfg)
        model.normalizer = normalizer
        targets = np.stack([decompose_label(int(y), num_classes) for y in labels])
        val_targets = np.stack([decompose_label(int(y), num_classes)
                                for y in val_y])
        model, history = fit(model, train_sequences, targets.astype(np.float32),
                             val_sequences, val_targets, tcfg,
                             class_labels=labels)
        return OrdinalModel(num_classes=num_classes, shared=model,
                            normalizer=normalizer), [history]

    members: list[EngagementModel] = []
    histories: list[TrainHistory] = []
    for i in range(num_classes - 1):
        cfg = replace(base_config, head="binary", seed=base_config.seed + i)
        tcfg = replace(train_config, loss="binary_cross_entropy",
                       seed=train_config.seed + i)
        model = build_model(cfg)
        model.normalizer = normalizer
        targets = (labels <= i).astype(np.float32)
        val_targets = (val_y <= i).astype(np.int64)
        model, history = fit(model, train_sequences, targets,
                             val_sequences, val_targets, tcfg,
                             class_labels=labels)
        members.append(model)
        histories.append(history)

    return OrdinalModel(num_classes=num_classes, models=members,
                        normalizer=normalizer), histories


def exceedance_probs(ordinal_model: OrdinalModel, sequences) -> np.ndarray:
    """(n, C-1) matrix of p(y > i) from the threshold models' sigmoids."""
    if ordinal_model.shared is not None:
        logits = predict_outputs(ordinal_model.shared, sequences)
        return 1.0 - torch.sigmoid(torch.from_numpy(logits)).numpy()
    cols = []
    for model in ordinal_model.models:
        logits = predict_outputs(model, sequences).reshape(-1)
        p_le = torch.sigmoid(torch.from_numpy(logits)).numpy()
        cols.append(1.0 - p_le)
    return np.stack(cols, axis=1)


def predict_ordinal(ordinal_model: OrdinalModel, sequences,
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Recombined (n, C) reported probabilities and (n,) predicted classes."""
    single = isinstance(sequences, np.ndarray) and sequences.ndim == 2
    seqs = [sequences] if single else list(sequences)
    exceed = exceedance_probs(ordinal_model, seqs)
    probs = np.empty((len(seqs), ordinal_model.num_classes))
    classes = np.empty(len(seqs), dtype=np.int64)
    for row, e in enumerate(exceed):
        res = recombine(np.clip(e, 0.0, 1.0))
        probs[row] = res.reported
        classes[row] = res.predicted_class
    if single:
        return probs[0], classes[0]
    return probs, classes


def save_ordinal(ordinal_model: OrdinalModel, path) -> None:
    """Checkpoint directory: per-threshold subdirs (or one shared subdir)
    plus an ordinal.json manifest."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if ordinal_model.shared is not None:
        save_checkpoint(ordinal_model.shared, path / "shared",
                        normalizer=ordinal_model.normalizer)
        names = ["shared"]
    else:
        names = [f"threshold_{i}" for i in range(len(ordinal_model.models))]
        for name, model in zip(names, ordinal_model.models):
            save_checkpoint(model, path / name,
                            normalizer=ordinal_model.normalizer)
    doc = {"format_version": CHECKPOINT_FORMAT,
           "num_classes": ordinal_model.num_classes,
           "shared_backbone": ordinal_model.shared is not None,
           "thresholds": names}
    (path / "ordinal.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_ordinal(path) -> OrdinalModel:
    path = Path(path)
    meta_path = path / "ordinal.json"
    if not meta_path.is_file():
        raise CorruptCheckpoint(f"{path}: missing ordinal.json")
    try:
        doc = json.loads(meta_path.read_text())
        num_classes = int(doc["num_classes"])
        names = list(doc["thresholds"])
        shared = bool(doc.get("shared_backbone", False))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable ordinal.json ({exc})") from None
    version = str(doc.get("format_version", ""))
    if version.split(".")[0] != CHECKPOINT_FORMAT.split(".")[0]:
        raise VersionMismatch(f"{path}: unsupported format {version!r}")
    if shared:
        model = load_checkpoint(path / names[0])
        return OrdinalModel(num_classes=num_classes, shared=model,
                            normalizer=model.normalizer)
    members = [load_checkpoint(path / name) for name in names]
    normalizer = members[0].normalizer if members else None
    return OrdinalModel(num_classes=num_classes, models=members,
                        normalizer=normalizer)


def is_ordinal_checkpoint(path) -> bool:
    return (Path(path) / "ordinal.json").is_file()
