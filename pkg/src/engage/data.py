"""Manifest-to-tensors assembly shared by the CLI, training flows, and
evaluation: parsing with repair, feature extraction per mode, and
train-split-only normalization."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig
from .features import (
    CLIP_LAYOUT,
    FRAME_LAYOUT,
    Normalizer,
    apply_normalizer,
    clip_feature_matrix,
    fit_normalizer,
    frame_input_matrix,
)
from .ingest import FrameSeries, Manifest, VALID_SPLITS, load_series, repair_series
from .models import EngagementModel, load_checkpoint
from .ordinal import is_ordinal_checkpoint, load_ordinal, predict_ordinal
from .training import predict_outputs

log = logging.getLogger(__name__)


@dataclass
class FeatureParams:
    clip_seconds: float = 10.0
    overlap: float = 0.5
    blink_threshold: float = 0.5
    min_separation: int = 6

    def to_dict(self) -> dict:
        return {"clip_seconds": self.clip_seconds, "overlap": self.overlap,
                "blink_threshold": self.blink_threshold,
                "min_separation": self.min_separation}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureParams":
        return cls(**d)


@dataclass
class PreparedData:
    """Normalized sequences and labels per split, plus the fitted normalizer."""

    mode: str
    sequences: dict = field(default_factory=dict)   # split -> list[np.float32 2-d]
    labels: dict = field(default_factory=dict)      # split -> np.ndarray
    video_ids: dict = field(default_factory=dict)   # split -> list[str]
    normalizer: Normalizer | None = None
    label_kind: str = "ordinal_class"
    num_classes: int = 4

    def batch_classes(self, split: str = "train"):
        """Integer classes for balanced batching; None when not derivable."""
        y = self.labels[split]
        if self.label_kind == "ordinal_class":
            return y.astype(np.int64)
        distinct = np.unique(y)
        if len(distinct) <= max(10, self.num_classes):
            return np.searchsorted(distinct, y).astype(np.int64)
        return None


def load_split_series(manifest: Manifest, split: str) -> list[FrameSeries]:
    """Parse and repair every entry of a split, dropping unusable videos."""
    out = []
    for entry in manifest.by_split(split):
        series, report = repair_series(load_series(entry))
        if not report.usable:
            log.warning("%s: only %.0f%% valid frames, skipping",
                        entry.video_id, 100 * report.valid_fraction)
            continue
        out.append(series)
    return out


def _label_value(series: FrameSeries):
    lab = series.label
    if lab.kind == "ordinal_class":
        return lab.class_value
    return lab.real_value


def prepare_data(manifest: Manifest, mode: str,
                 params: FeatureParams | None = None,
                 normalizer: Normalizer | None = None) -> PreparedData:
    """Build normalized per-split datasets for frame or clip mode.

    The normalizer is fitted on the training split unless one is supplied
    (evaluation against a checkpoint's embedded stats).
    """
    if mode not in ("frame", "clip"):
        raise InvalidConfig(f"unknown data mode {mode!r}")
    params = params or FeatureParams()
    layout = FRAME_LAYOUT if mode == "frame" else CLIP_LAYOUT

    raw: dict[str, list[np.ndarray]] = {}
    data = PreparedData(mode=mode,
                        label_kind=manifest.label_kind,
                        num_classes=manifest.num_classes)
    for split in VALID_SPLITS:
        series_list = load_split_series(manifest, split)
        seqs = []
        for s in series_list:
            if mode == "frame":
                seqs.append(frame_input_matrix(s))
            else:
                seqs.append(clip_feature_matrix(
                    s, params.clip_seconds, params.overlap,
                    params.blink_threshold, params.min_separation))
        raw[split] = seqs
        data.video_ids[split] = [s.video_id for s in series_list]
        dtype = np.int64 if manifest.label_kind == "ordinal_class" else np.float64
        data.labels[split] = np.array([_label_value(s) for s in series_list],
                                      dtype=dtype)

    if normalizer is None:
        if not raw["train"]:
            raise InvalidConfig("cannot fit a normalizer: empty training split")
        normalizer = fit_normalizer(np.concatenate(raw["train"], axis=0), layout)
    data.normalizer = normalizer

    for split in VALID_SPLITS:
        data.sequences[split] = [
            apply_normalizer(normalizer, s, layout).astype(np.float32)
            for s in raw[split]]
    return data


@dataclass
class Predictions:
    """Model outputs on a list of sequences, one row per sequence."""

    kind: str                       # "class" | "regression"
    values: np.ndarray              # predicted class or clipped real value
    probs: np.ndarray | None = None  # (n, C) reported probabilities


def predict_model(model: EngagementModel, sequences) -> Predictions:
    outputs = predict_outputs(model, sequences)
    head = model.config.head
    if head == "multiclass":
        z = outputs - outputs.max(axis=1, keepdims=True)
        probs = np.exp(z)
        probs /= probs.sum(axis=1, keepdims=True)
        return Predictions(kind="class", values=outputs.argmax(axis=1),
                           probs=probs)
    if head == "binary":
        p = 1.0 / (1.0 + np.exp(-outputs.reshape(-1)))
        return Predictions(kind="class",
                           values=(p > 0.5).astype(np.int64),
                           probs=np.stack([1 - p, p], axis=1))
    # Regression outputs are reported clipped to the label range.
    return Predictions(kind="regression",
                       values=np.clip(outputs.reshape(-1), 0.0, 1.0))


def predict_checkpoint(checkpoint_path, sequences) -> Predictions:
    """Run a plain or ordinal checkpoint on prepared sequences."""
    if is_ordinal_checkpoint(checkpoint_path):
        om = load_ordinal(checkpoint_path)
        probs, classes = predict_ordinal(om, sequences)
        return Predictions(kind="class", values=classes, probs=probs)
    model = load_checkpoint(checkpoint_path)
    return predict_model(model, sequences)


def checkpoint_normalizer(checkpoint_path) -> Normalizer | None:
    if is_ordinal_checkpoint(checkpoint_path):
        return load_ordinal(checkpoint_path).normalizer
    return load_checkpoint(checkpoint_path).normalizer
