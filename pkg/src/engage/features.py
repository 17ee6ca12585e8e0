"""Frame-series to model-ready features.

Two consumption modes:

* frame mode — the raw 270-column frame matrix (affect, latent, behavioral
  blocks in file order), one row per timestamp of a sequence model;
* clip mode — overlapping fixed-length clips summarized into a 49-element
  vector: affect mean/std, blink rate, and velocity/acceleration statistics
  of the movement channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ingest
from .errors import EmptySeries, LayoutMismatch, SeriesTooShort, TooFewSamples
from .ingest import (
    AROUSAL_COL,
    AU45_COL,
    FrameSeries,
    GAZE_COLS,
    HEAD_LOC_COLS,
    HEAD_POSE_COLS,
    LATENT_DIM,
    VALENCE_COL,
    WRIST_COLS,
)

CLIP_LAYOUT = "clip49.v1"
FRAME_LAYOUT = "frame270.v1"

# Movement channels summarized by velocity/acceleration stats, in layout order.
_MOVEMENT_SIGNALS = (
    ("gaze_x", GAZE_COLS.start), ("gaze_y", GAZE_COLS.start + 1),
    ("head_x", HEAD_LOC_COLS.start), ("head_y", HEAD_LOC_COLS.start + 1),
    ("head_z", HEAD_LOC_COLS.start + 2),
    ("head_pitch", HEAD_POSE_COLS.start), ("head_yaw", HEAD_POSE_COLS.start + 1),
    ("head_roll", HEAD_POSE_COLS.start + 2),
    ("wrist_x", WRIST_COLS.start), ("wrist_y", WRIST_COLS.start + 1),
    ("wrist_z", WRIST_COLS.start + 2),
)


def _clip_feature_names() -> tuple[str, ...]:
    names = ["valence_mean", "valence_std", "arousal_mean", "arousal_std",
             "blink_rate"]
    for sig, _ in _MOVEMENT_SIGNALS:
        names += [f"{sig}_vel_mean", f"{sig}_vel_std",
                  f"{sig}_acc_mean", f"{sig}_acc_std"]
    return tuple(f"f{i:02d}_{name}" for i, name in enumerate(names))


CLIP_FEATURE_NAMES: tuple[str, ...] = _clip_feature_names()
N_CLIP_FEATURES = len(CLIP_FEATURE_NAMES)  # 49

GAZE_FEATURE_NAMES: tuple[str, ...] = tuple(
    n for n in CLIP_FEATURE_NAMES if "_gaze_" in n)


def frame_layout(latent_dim: int = LATENT_DIM) -> str:
    """Layout tag for a frame-mode input of the given latent width."""
    if latent_dim == LATENT_DIM:
        return FRAME_LAYOUT
    return f"frame{2 + latent_dim + 12}.v1"


@dataclass(frozen=True)
class FrameInput:
    """Per-frame feature blocks, kept separate until fusion inside the model."""

    latent: np.ndarray      # (n, 256)
    affect: np.ndarray      # (n, 2) valence, arousal
    behavioral: np.ndarray  # (n, 12) au45; gaze; head_loc; head_pose; wrist

    def __post_init__(self):
        if self.latent.shape[-1] != LATENT_DIM:
            raise ValueError(f"latent block must be {LATENT_DIM} wide")
        if self.affect.shape[-1] != 2 or self.behavioral.shape[-1] != 12:
            raise ValueError("affect/behavioral blocks must be 2/12 wide")


def frame_inputs(series: FrameSeries) -> FrameInput:
    v = series.values
    return FrameInput(latent=v[:, ingest.LATENT_COLS],
                      affect=v[:, :2],
                      behavioral=v[:, AU45_COL:])


def frame_input_matrix(series: FrameSeries) -> np.ndarray:
    """The (n, 270) frame-mode model input: file column order."""
    return series.values


@dataclass
class Clip:
    """A contiguous slice of a FrameSeries, padded if the video was short."""

    video_id: str
    start_frame: int
    end_frame: int
    frame_index: np.ndarray
    values: np.ndarray  # (L, 270)
    padded: bool = False

    def __len__(self) -> int:
        return len(self.frame_index)

    @property
    def valence(self) -> np.ndarray:
        return self.values[:, VALENCE_COL]

    @property
    def arousal(self) -> np.ndarray:
        return self.values[:, AROUSAL_COL]

    @property
    def au45(self) -> np.ndarray:
        return self.values[:, AU45_COL]


def segment_clips(series: FrameSeries, clip_seconds: float = 10.0,
                  overlap_fraction: float = 0.5) -> list[Clip]:
    """Cut a series into fixed-length overlapping clips.

    Clip length is ``L = round(clip_seconds * fps)`` frames and clips start
    every ``round(L * (1 - overlap_fraction))`` frames. Trailing fragments
    shorter than L are dropped. A video shorter than L yields one clip padded
    by repeating its final frame.
    """
    n = len(series)
    if n == 0:
        raise EmptySeries(series.video_id)
    if not 0.0 <= overlap_fraction < 1.0:
        raise ValueError("overlap_fraction must be in [0, 1)")
    length = int(round(clip_seconds * series.fps))
    if length < 2:
        raise ValueError(f"clip length {length} frames is too short")
    step = max(1, int(round(length * (1.0 - overlap_fraction))))

    if n < length:
        pad = np.repeat(series.values[-1:], length - n, axis=0)
        return [Clip(
            video_id=series.video_id,
            start_frame=int(series.frame_index[0]),
            end_frame=int(series.frame_index[-1]),
            frame_index=series.frame_index,
            values=np.concatenate([series.values, pad], axis=0),
            padded=True,
        )]

    clips = []
    for start in range(0, n - length + 1, step):
        stop = start + length
        clips.append(Clip(
            video_id=series.video_id,
            start_frame=int(series.frame_index[start]),
            end_frame=int(series.frame_index[stop - 1]),
            frame_index=series.frame_index[start:stop],
            values=series.values[start:stop],
        ))
    return clips


def blink_rate(au45_series, threshold: float = 0.5,
               min_separation: int = 6) -> float:
    """Blinks per frame: thresholded strict peaks in the AU45 intensity trace.

    A peak is a strict local maximum with value >= threshold; of any two
    peaks closer than ``min_separation`` frames only the larger survives.
    """
    x = np.asarray(au45_series, dtype=np.float64)
    if x.ndim != 1 or len(x) == 0:
        raise ValueError("au45_series must be a non-empty 1-d series")
    if threshold <= 0:
        raise ValueError("threshold must be positive")

    n = len(x)
    if n < 3:
        return 0.0
    interior = np.arange(1, n - 1)
    is_peak = (x[interior] > x[interior - 1]) & (x[interior] > x[interior + 1])
    candidates = interior[is_peak & (x[interior] >= threshold)]
    if len(candidates) == 0:
        return 0.0

    # Taller peaks win inside the refractory window; ties go to the earlier.
    order = candidates[np.lexsort((candidates, -x[candidates]))]
    kept: list[int] = []
    for t in order:
        if all(abs(t - k) >= min_separation for k in kept):
            kept.append(int(t))
    return len(kept) / n


def diff_stats(signal, fps: float) -> tuple[float, float, float, float]:
    """Population mean/std of a signal's first and second time derivatives.

    Velocity ``v[t] = (x[t] - x[t-1]) * fps`` and acceleration
    ``a[t] = (v[t] - v[t-1]) * fps``, in units per second (per second²).
    """
    x = np.asarray(signal, dtype=np.float64)
    if len(x) < 3:
        raise SeriesTooShort(f"diff_stats needs >= 3 points, got {len(x)}")
    if fps <= 0:
        raise ValueError("fps must be positive")
    vel = np.diff(x) * fps
    acc = np.diff(vel) * fps
    return (float(vel.mean()), float(vel.std()),
            float(acc.mean()), float(acc.std()))


def clip_feature_vector(clip: Clip, fps: float, blink_threshold: float = 0.5,
                        min_separation: int = 6) -> np.ndarray:
    """The 49-element clip summary in the documented fixed layout.

    [0..3] valence/arousal mean and std, [4] blink rate, [5..48] velocity and
    acceleration mean/std for gaze (x, y), head location (x, y, z), head pose
    (pitch, yaw, roll), and wrist (x, y, z).
    """
    if len(clip) < 3:
        raise SeriesTooShort(f"clip has {len(clip)} records, need >= 3")
    out = np.empty(N_CLIP_FEATURES, dtype=np.float64)
    out[0] = clip.valence.mean()
    out[1] = clip.valence.std()
    out[2] = clip.arousal.mean()
    out[3] = clip.arousal.std()
    out[4] = blink_rate(clip.au45, threshold=blink_threshold,
                        min_separation=min_separation)
    pos = 5
    for _, col in _MOVEMENT_SIGNALS:
        out[pos:pos + 4] = diff_stats(clip.values[:, col], fps)
        pos += 4
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{clip.video_id}: non-finite clip feature")
    return out


def clip_feature_matrix(series: FrameSeries, clip_seconds: float = 10.0,
                        overlap_fraction: float = 0.5,
                        blink_threshold: float = 0.5,
                        min_separation: int = 6) -> np.ndarray:
    """Segment a series and stack one 49-vector per clip, in time order."""
    clips = segment_clips(series, clip_seconds, overlap_fraction)
    return np.stack([
        clip_feature_vector(c, series.fps, blink_threshold, min_separation)
        for c in clips
    ])


@dataclass
class Normalizer:
    """Per-feature z-scoring statistics fitted on the training split only."""

    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray  # features whose training variance was zero
    layout: str

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "constant": self.constant.tolist(), "layout": self.layout}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(mean=np.asarray(d["mean"], dtype=np.float64),
                   std=np.asarray(d["std"], dtype=np.float64),
                   constant=np.asarray(d["constant"], dtype=bool),
                   layout=str(d["layout"]))


def fit_normalizer(samples: np.ndarray, layout: str) -> Normalizer:
    """Fit per-feature mean/std on a (n_samples, n_features) matrix.

    Zero-variance features get std 1 and are flagged constant so that
    normalizing maps them to 0 instead of NaN.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("fit_normalizer expects a 2-d sample matrix")
    if x.shape[0] < 2:
        raise TooFewSamples(f"need >= 2 samples to fit, got {x.shape[0]}")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    constant = std < 1e-12
    std = np.where(constant, 1.0, std)
    return Normalizer(mean=mean, std=std, constant=constant, layout=layout)


def apply_normalizer(normalizer: Normalizer, features: np.ndarray,
                     layout: str | None = None) -> np.ndarray:
    """Z-score features with fitted stats; checks the layout contract."""
    if layout is not None and layout != normalizer.layout:
        raise LayoutMismatch(
            f"normalizer fitted on {normalizer.layout!r}, got {layout!r}")
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != len(normalizer.mean):
        raise LayoutMismatch(
            f"normalizer width {len(normalizer.mean)}, input width {x.shape[-1]}")
    return (x - normalizer.mean) / normalizer.std


def write_clip_features(path, video_ids, clip_indices, labels,
                        features: np.ndarray) -> None:
    """Export clip vectors as CSV: video_id, clip_index, label, f00..f48."""
    features = np.asarray(features)
    header = ["video_id", "clip_index", "label", *CLIP_FEATURE_NAMES]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for vid, ci, lab, row in zip(video_ids, clip_indices, labels, features):
            cells = [str(vid), str(int(ci)), "%.17g" % lab]
            cells.extend("%.17g" % v for v in row)
            fh.write(",".join(cells) + "\n")


def read_clip_features(path):
    """Read a clip-feature CSV back into (video_ids, clip_indices, labels, X)."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        expected = ["video_id", "clip_index", "label", *CLIP_FEATURE_NAMES]
        if header != expected:
            raise LayoutMismatch(f"{path}: unexpected clip-feature header")
        vids, cidx, labels, rows = [], [], [], []
        for line in fh:
            cells = line.rstrip("\n").split(",")
            vids.append(cells[0])
            cidx.append(int(cells[1]))
            labels.append(float(cells[2]))
            rows.append([float(c) for c in cells[3:]])
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != N_CLIP_FEATURES:
        raise LayoutMismatch(f"{path}: expected {N_CLIP_FEATURES} feature columns")
    return vids, np.asarray(cidx), np.asarray(labels), x
