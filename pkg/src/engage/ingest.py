"""Parse per-frame feature exports and dataset manifests into validated series.

The per-frame file contract is a comma-separated table with a fixed header:
``frame, success, valence, arousal, latent_000 .. latent_255, au45,
gaze_x, gaze_y, head_x, head_y, head_z, head_pitch, head_yaw, head_roll,
wrist_x, wrist_y, wrist_z``. Everything after ``frame`` and ``success``
(270 columns) is stored as one float matrix in file order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AllFramesInvalid,
    DuplicateVideoId,
    EmptyFile,
    MalformedRow,
    MissingColumn,
    MixedLabelKinds,
    UnresolvablePath,
)

LATENT_DIM = 256

# Feature columns in file order (everything except frame / success).
FEATURE_COLUMNS: tuple[str, ...] = (
    ("valence", "arousal")
    + tuple(f"latent_{i:03d}" for i in range(LATENT_DIM))
    + ("au45", "gaze_x", "gaze_y",
       "head_x", "head_y", "head_z",
       "head_pitch", "head_yaw", "head_roll",
       "wrist_x", "wrist_y", "wrist_z")
)

FRAME_FILE_COLUMNS: tuple[str, ...] = ("frame", "success") + FEATURE_COLUMNS

N_FEATURES = len(FEATURE_COLUMNS)  # 270

# Offsets into the feature matrix (shared with the features module).
VALENCE_COL = 0
AROUSAL_COL = 1
LATENT_COLS = slice(2, 2 + LATENT_DIM)
AU45_COL = 2 + LATENT_DIM
GAZE_COLS = slice(AU45_COL + 1, AU45_COL + 3)
HEAD_LOC_COLS = slice(AU45_COL + 3, AU45_COL + 6)
HEAD_POSE_COLS = slice(AU45_COL + 6, AU45_COL + 9)
WRIST_COLS = slice(AU45_COL + 9, AU45_COL + 12)

VALID_SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class Label:
    """Engagement annotation: an ordinal class or a continuous value in [0, 1]."""

    kind: str  # "ordinal_class" | "continuous"
    num_classes: int = 4
    class_value: int | None = None
    real_value: float | None = None

    def __post_init__(self):
        if self.kind not in ("ordinal_class", "continuous"):
            raise ValueError(f"unknown label kind {self.kind!r}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.kind == "ordinal_class":
            if self.class_value is None or self.real_value is not None:
                raise ValueError("ordinal label requires class_value only")
            if not 0 <= self.class_value < self.num_classes:
                raise ValueError(
                    f"class_value {self.class_value} outside [0, {self.num_classes})")
        else:
            if self.real_value is None or self.class_value is not None:
                raise ValueError("continuous label requires real_value only")
            if not 0.0 <= self.real_value <= 1.0:
                raise ValueError(f"real_value {self.real_value} outside [0, 1]")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "num_classes": self.num_classes}
        if self.kind == "ordinal_class":
            d["class_value"] = self.class_value
        else:
            d["real_value"] = self.real_value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Label":
        return cls(
            kind=d["kind"],
            num_classes=int(d.get("num_classes", 4)),
            class_value=d.get("class_value"),
            real_value=d.get("real_value"),
        )


@dataclass(frozen=True)
class FrameRecord:
    """One video frame's features (a row view into a FrameSeries)."""

    frame_index: int
    valid: bool
    valence: float
    arousal: float
    latent: np.ndarray      # (256,)
    au45: float
    gaze: np.ndarray        # (2,) x, y
    head_loc: np.ndarray    # (3,) x, y, z in mm
    head_pose: np.ndarray   # (3,) pitch, yaw, roll in radians
    wrist: np.ndarray       # (3,) x, y, z


@dataclass
class FrameSeries:
    """Ordered per-frame features for one video, stored columnar.

    ``values`` holds the 270 feature columns in file order; ``frame_index``
    and ``valid`` mirror the ``frame`` and ``success`` file columns.
    """

    video_id: str
    fps: float
    frame_index: np.ndarray          # (n,) int64, strictly increasing
    valid: np.ndarray                # (n,) bool
    values: np.ndarray               # (n, 270) float64
    label: Label | None = None

    def __post_init__(self):
        if len(self.frame_index) == 0:
            raise ValueError("FrameSeries must be non-empty")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.values.shape != (len(self.frame_index), N_FEATURES):
            raise ValueError(
                f"values must be (n, {N_FEATURES}), got {self.values.shape}")
        if np.any(np.diff(self.frame_index) <= 0):
            raise ValueError("frame_index must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frame_index)

    # Column accessors (views, not copies).
    @property
    def valence(self) -> np.ndarray:
        return self.values[:, VALENCE_COL]

    @property
    def arousal(self) -> np.ndarray:
        return self.values[:, AROUSAL_COL]

    @property
    def latent(self) -> np.ndarray:
        return self.values[:, LATENT_COLS]

    @property
    def au45(self) -> np.ndarray:
        return self.values[:, AU45_COL]

    @property
    def gaze(self) -> np.ndarray:
        return self.values[:, GAZE_COLS]

    @property
    def head_loc(self) -> np.ndarray:
        return self.values[:, HEAD_LOC_COLS]

    @property
    def head_pose(self) -> np.ndarray:
        return self.values[:, HEAD_POSE_COLS]

    @property
    def wrist(self) -> np.ndarray:
        return self.values[:, WRIST_COLS]

    def record(self, i: int) -> FrameRecord:
        row = self.values[i]
        return FrameRecord(
            frame_index=int(self.frame_index[i]),
            valid=bool(self.valid[i]),
            valence=float(row[VALENCE_COL]),
            arousal=float(row[AROUSAL_COL]),
            latent=row[LATENT_COLS],
            au45=float(row[AU45_COL]),
            gaze=row[GAZE_COLS],
            head_loc=row[HEAD_LOC_COLS],
            head_pose=row[HEAD_POSE_COLS],
            wrist=row[WRIST_COLS],
        )

    @property
    def frames(self) -> list[FrameRecord]:
        return [self.record(i) for i in range(len(self))]


@dataclass(frozen=True)
class ValidationReport:
    video_id: str
    valid_fraction: float
    filled_count: int
    usable: bool


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    feature_file_path: Path
    label: Label
    split: str
    fps: float


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    @property
    def label_kind(self) -> str:
        return self.entries[0].label.kind

    @property
    def num_classes(self) -> int:
        return self.entries[0].label.num_classes

    def by_split(self, split: str) -> list[ManifestEntry]:
        if split not in VALID_SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [e for e in self.entries if e.split == split]


def parse_frame_file(path, video_id: str | None = None, fps: float = 30.0,
                     label: Label | None = None) -> FrameSeries:
    """Parse one per-frame feature file into a FrameSeries.

    Raises MissingColumn if the header deviates from the fixed schema,
    MalformedRow for non-numeric cells, wrong-width rows, non-increasing
    frame indices, or out-of-range values on tracking-success rows, and
    EmptyFile when there are no data rows.
    """
    path = Path(path)
    text = path.read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise EmptyFile(f"{path}: file is empty")

    header = tuple(c.strip() for c in lines[0].split(","))
    if header != FRAME_FILE_COLUMNS:
        missing = [c for c in FRAME_FILE_COLUMNS if c not in header]
        extra = [c for c in header if c not in FRAME_FILE_COLUMNS]
        detail = []
        if missing:
            detail.append(f"missing {missing[:5]}")
        if extra:
            detail.append(f"unexpected {extra[:5]}")
        if not detail:
            detail.append("columns out of order")
        raise MissingColumn(f"{path}: bad header ({'; '.join(detail)})")

    if len(lines) == 1:
        raise EmptyFile(f"{path}: no data rows")

    n = len(lines) - 1
    data = np.empty((n, len(FRAME_FILE_COLUMNS)), dtype=np.float64)
    for i, line in enumerate(lines[1:]):
        cells = line.split(",")
        if len(cells) != len(FRAME_FILE_COLUMNS):
            raise MalformedRow(
                f"{path}: row {i + 1} has {len(cells)} cells, "
                f"expected {len(FRAME_FILE_COLUMNS)}")
        try:
            data[i] = [float(c) for c in cells]
        except ValueError as exc:
            raise MalformedRow(f"{path}: row {i + 1}: {exc}") from None

    frame_col = data[:, 0]
    success_col = data[:, 1]
    values = data[:, 2:]

    if np.any(frame_col != np.floor(frame_col)) or np.any(frame_col < 0):
        raise MalformedRow(f"{path}: frame column must be non-negative integers")
    frame_index = frame_col.astype(np.int64)
    if np.any(np.diff(frame_index) <= 0):
        raise MalformedRow(f"{path}: frame indices must be strictly increasing")
    if not np.all(np.isin(success_col, (0.0, 1.0))):
        raise MalformedRow(f"{path}: success column must be 0 or 1")
    valid = success_col.astype(bool)

    # Invariants on tracking-success rows: finite, affect in [-1, 1].
    if valid.any():
        ok = values[valid]
        if not np.all(np.isfinite(ok)):
            raise MalformedRow(f"{path}: non-finite value on a success=1 row")
        affect = ok[:, (VALENCE_COL, AROUSAL_COL)]
        if np.any(np.abs(affect) > 1.0 + 1e-9):
            raise MalformedRow(f"{path}: valence/arousal outside [-1, 1] "
                               f"on a success=1 row")

    return FrameSeries(
        video_id=video_id if video_id is not None else path.stem,
        fps=fps,
        frame_index=frame_index,
        valid=valid,
        values=values,
        label=label,
    )


def write_frame_file(series: FrameSeries, path, fmt: str = "%.17g") -> None:
    """Serialize a FrameSeries back to the per-frame file format.

    The default format round-trips float64 exactly, so
    ``parse(write(parse(f)))`` equals ``parse(f)``.
    """
    path = Path(path)
    with path.open("w") as fh:
        fh.write(",".join(FRAME_FILE_COLUMNS) + "\n")
        for i in range(len(series)):
            cells = [str(int(series.frame_index[i])),
                     "1" if series.valid[i] else "0"]
            cells.extend(fmt % v for v in series.values[i])
            fh.write(",".join(cells) + "\n")


def repair_series(series: FrameSeries) -> tuple[FrameSeries, ValidationReport]:
    """Fill tracking-failure frames from the nearest valid neighbour.

    Invalid frames copy the last valid record; a leading invalid run copies
    the first valid record. Valid rows are never changed and the valid flags
    are preserved, which makes the operation idempotent. The report flags the
    series unusable when fewer than half the frames are valid.
    """
    n = len(series)
    n_valid = int(series.valid.sum())
    if n_valid == 0:
        raise AllFramesInvalid(f"{series.video_id}: no valid frames to fill from")

    valid_fraction = n_valid / n
    filled = n - n_valid
    if filled == 0:
        report = ValidationReport(series.video_id, 1.0, 0, True)
        return series, report

    idx = np.arange(n)
    # Index of the most recent valid frame at or before each position.
    src = np.maximum.accumulate(np.where(series.valid, idx, -1))
    first_valid = int(np.argmax(series.valid))
    src = np.where(src >= 0, src, first_valid)

    repaired = FrameSeries(
        video_id=series.video_id,
        fps=series.fps,
        frame_index=series.frame_index.copy(),
        valid=series.valid.copy(),
        values=series.values[src].copy(),
        label=series.label,
    )
    report = ValidationReport(
        video_id=series.video_id,
        valid_fraction=valid_fraction,
        filled_count=filled,
        usable=valid_fraction >= 0.5,
    )
    return repaired, report


def load_manifest(path) -> Manifest:
    """Load and validate a JSON dataset manifest.

    Relative feature-file paths resolve against the manifest's directory.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    raw_entries = doc["entries"]
    if not raw_entries:
        raise ValueError(f"{path}: manifest has no entries")

    base = path.parent
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for raw in raw_entries:
        vid = str(raw["video_id"])
        if vid in seen:
            raise DuplicateVideoId(f"{path}: duplicate video_id {vid!r}")
        seen.add(vid)
        split = raw["split"]
        if split not in VALID_SPLITS:
            raise ValueError(f"{path}: {vid}: unknown split {split!r}")
        fpath = Path(raw["feature_file_path"])
        if not fpath.is_absolute():
            fpath = base / fpath
        if not fpath.is_file():
            raise UnresolvablePath(f"{path}: {vid}: missing file {fpath}")
        entries.append(ManifestEntry(
            video_id=vid,
            feature_file_path=fpath,
            label=Label.from_dict(raw["label"]),
            split=split,
            fps=float(raw["fps"]),
        ))

    kinds = {e.label.kind for e in entries}
    if len(kinds) > 1:
        raise MixedLabelKinds(f"{path}: mixes label kinds {sorted(kinds)}")
    counts = {e.label.num_classes for e in entries}
    if len(counts) > 1:
        raise MixedLabelKinds(f"{path}: mixes num_classes {sorted(counts)}")

    return Manifest(entries=entries)


def write_manifest(manifest: Manifest, path) -> None:
    """Write a manifest as JSON, with paths relative to the manifest dir."""
    path = Path(path)
    base = path.parent.resolve()
    out = []
    for e in manifest.entries:
        fpath = e.feature_file_path.resolve()
        try:
            rel = str(fpath.relative_to(base))
        except ValueError:
            rel = str(fpath)
        out.append({
            "video_id": e.video_id,
            "feature_file_path": rel,
            "label": e.label.to_dict(),
            "split": e.split,
            "fps": e.fps,
        })
    path.write_text(json.dumps({"entries": out}, indent=2) + "\n")


def load_series(entry: ManifestEntry) -> FrameSeries:
    """Parse the feature file behind one manifest entry."""
    return parse_frame_file(entry.feature_file_path, video_id=entry.video_id,
                            fps=entry.fps, label=entry.label)
