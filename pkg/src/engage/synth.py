"""Seeded synthetic engagement data with a known optimal-classifier ceiling.

Each engagement level conditions the generative parameters monotonically:
higher levels get higher mean arousal/valence, calmer head/wrist movement,
and a lower blink rate. Gaze is a fixed-noise random walk carrying no class
signal, so gaze-derived features should rank at the bottom of any honest
feature-importance analysis of this data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import (
    AROUSAL_COL,
    AU45_COL,
    FrameSeries,
    GAZE_COLS,
    HEAD_LOC_COLS,
    HEAD_POSE_COLS,
    LATENT_COLS,
    LATENT_DIM,
    Label,
    Manifest,
    ManifestEntry,
    N_FEATURES,
    VALENCE_COL,
    WRIST_COLS,
    write_frame_file,
    write_manifest,
)

# EmotiW-style continuous annotations for the 4-level case.
_CONTINUOUS_LEVELS_4 = (0.0, 0.33, 0.66, 1.0)


@dataclass
class SynthConfig:
    num_classes: int = 4
    label_kind: str = "ordinal_class"  # or "continuous"
    videos_per_class: int = 50
    frames_per_video: int = 300
    fps: float = 30.0
    seed: int = 7
    # Affect: stationary AR(1) around a level-dependent mean, clipped to [-1, 1].
    arousal_base: float = -0.6
    arousal_step: float = 0.4
    valence_base: float = -0.3
    valence_step: float = 0.25
    affect_sd: float = 0.15
    affect_ar_coef: float = 0.9
    # Movement: random walks; head and wrist step size shrinks with level,
    # gaze step size is level-independent by design.
    movement_sd_base: float = 0.5
    movement_sd_step: float = -0.12
    gaze_sd: float = 0.2
    # Blinks: Poisson count per video, rendered as triangular AU45 pulses.
    blink_hz_base: float = 0.5
    blink_hz_step: float = -0.1
    blink_height: float = 1.5
    au45_noise: float = 0.1
    # Latent block: fixed seeded projection of (valence, arousal) plus noise.
    latent_noise_sd: float = 0.1

    def __post_init__(self):
        if self.label_kind not in ("ordinal_class", "continuous"):
            raise ValueError(f"unknown label_kind {self.label_kind!r}")
        if self.num_classes < 2 or self.videos_per_class < 1:
            raise ValueError("need >= 2 classes and >= 1 video per class")
        if self.frames_per_video < 10 or self.fps <= 0:
            raise ValueError("need >= 10 frames and positive fps")
        for level in range(self.num_classes):
            if self.movement_sd(level) <= 0 or self.blink_hz(level) < 0:
                raise ValueError(f"degenerate params at level {level}")

    def arousal_mean(self, level: int) -> float:
        return self.arousal_base + self.arousal_step * level

    def valence_mean(self, level: int) -> float:
        return self.valence_base + self.valence_step * level

    def movement_sd(self, level: int) -> float:
        return self.movement_sd_base + self.movement_sd_step * level

    def blink_hz(self, level: int) -> float:
        return self.blink_hz_base + self.blink_hz_step * level

    def continuous_value(self, level: int) -> float:
        if self.num_classes == 4:
            return _CONTINUOUS_LEVELS_4[level]
        return level / (self.num_classes - 1)

    def to_dict(self) -> dict:
        from dataclasses import asdict
        return asdict(self)


def _ar1(rng, n: int, mean: float, stationary_sd: float, coef: float) -> np.ndarray:
    """Stationary AR(1) sample of length n, clipped to [-1, 1]."""
    innovation_sd = stationary_sd * math.sqrt(1.0 - coef ** 2)
    x = np.empty(n)
    x[0] = rng.normal(0.0, stationary_sd)
    eps = rng.normal(0.0, innovation_sd, size=n - 1)
    for t in range(1, n):
        x[t] = coef * x[t - 1] + eps[t - 1]
    return np.clip(mean + x, -1.0, 1.0)


def _random_walk(rng, n: int, channels: int, step_sd: float,
                 start=None) -> np.ndarray:
    steps = rng.normal(0.0, step_sd, size=(n, channels))
    steps[0] = 0.0
    walk = np.cumsum(steps, axis=0)
    if start is not None:
        walk += np.asarray(start)
    return walk


def _blink_trace(rng, n: int, count: int, height: float, noise_sd: float) -> np.ndarray:
    """AU45 trace with `count` well-separated triangular pulses plus noise."""
    trace = rng.uniform(0.0, noise_sd, size=n)
    if count <= 0:
        return trace
    candidates = rng.permutation(np.arange(3, n - 3))
    centers: list[int] = []
    for c in candidates:
        if len(centers) == count:
            break
        if all(abs(int(c) - k) >= 8 for k in centers):
            centers.append(int(c))
    shape = height * np.array([1 / 3, 2 / 3, 1.0, 2 / 3, 1 / 3])
    for c in centers:
        trace[c - 2:c + 3] += shape
    return trace


def _latent_projection(seed: int) -> np.ndarray:
    """The fixed 256x2 map from (valence, arousal) into the latent block."""
    rng = np.random.default_rng([seed, 999_983])
    return rng.normal(0.0, 1.0, size=(LATENT_DIM, 2))


def simulate_series(config: SynthConfig, level: int, video_index: int,
                    projection: np.ndarray | None = None) -> FrameSeries:
    """Generate one video's FrameSeries for the given engagement level."""
    rng = np.random.default_rng([config.seed, level, video_index])
    if projection is None:
        projection = _latent_projection(config.seed)
    n = config.frames_per_video

    valence = _ar1(rng, n, config.valence_mean(level), config.affect_sd,
                   config.affect_ar_coef)
    arousal = _ar1(rng, n, config.arousal_mean(level), config.affect_sd,
                   config.affect_ar_coef)

    move_sd = config.movement_sd(level)
    gaze = _random_walk(rng, n, 2, config.gaze_sd)
    head_loc = _random_walk(rng, n, 3, move_sd, start=(0.0, 0.0, 500.0))
    head_pose = _random_walk(rng, n, 3, move_sd)
    wrist = _random_walk(rng, n, 3, move_sd)

    duration_s = n / config.fps
    blink_count = int(rng.poisson(config.blink_hz(level) * duration_s))
    au45 = _blink_trace(rng, n, blink_count, config.blink_height,
                        config.au45_noise)

    affect = np.stack([valence, arousal], axis=1)
    latent = affect @ projection.T + rng.normal(
        0.0, config.latent_noise_sd, size=(n, LATENT_DIM))

    values = np.empty((n, N_FEATURES))
    values[:, VALENCE_COL] = valence
    values[:, AROUSAL_COL] = arousal
    values[:, LATENT_COLS] = latent
    values[:, AU45_COL] = au45
    values[:, GAZE_COLS] = gaze
    values[:, HEAD_LOC_COLS] = head_loc
    values[:, HEAD_POSE_COLS] = head_pose
    values[:, WRIST_COLS] = wrist

    if config.label_kind == "ordinal_class":
        label = Label(kind="ordinal_class", num_classes=config.num_classes,
                      class_value=level)
    else:
        label = Label(kind="continuous", num_classes=config.num_classes,
                      real_value=config.continuous_value(level))
    return FrameSeries(
        video_id=f"synth_c{level}_v{video_index:03d}",
        fps=config.fps,
        frame_index=np.arange(n, dtype=np.int64),
        valid=np.ones(n, dtype=bool),
        values=values,
        label=label,
    )


def _split_of(index: int, per_class: int) -> str:
    n_train = int(per_class * 0.6)
    n_val = int(per_class * 0.2)
    if index < n_train:
        return "train"
    if index < n_train + n_val:
        return "validation"
    return "test"


def generate(config: SynthConfig, out_dir) -> Path:
    """Write per-frame feature files and a stratified 60/20/20 manifest.

    Deterministic for a given config: per-video generator seeds are derived
    from (seed, level, index) and files are written with fixed formatting.
    Returns the manifest path.
    """
    out_dir = Path(out_dir)
    videos_dir = out_dir / "videos"
    videos_dir.mkdir(parents=True, exist_ok=True)
    projection = _latent_projection(config.seed)

    entries = []
    for level in range(config.num_classes):
        for idx in range(config.videos_per_class):
            series = simulate_series(config, level, idx, projection)
            fpath = videos_dir / f"{series.video_id}.csv"
            write_frame_file(series, fpath, fmt="%.6g")
            entries.append(ManifestEntry(
                video_id=series.video_id,
                feature_file_path=fpath,
                label=series.label,
                split=_split_of(idx, config.videos_per_class),
                fps=config.fps,
            ))

    manifest_path = out_dir / "manifest.json"
    write_manifest(Manifest(entries=entries), manifest_path)
    return manifest_path


# --- Bayes oracle -----------------------------------------------------------
#
# Sufficient statistics per video and their exact class-conditional laws
# under the generator (affect clipping is negligible at the default params):
#   mean arousal / mean valence  ~  Normal(mu(level), V)   with V the variance
#       of an n-sample mean of a stationary AR(1) process;
#   movement SS = sum of squared steps over the 9 level-dependent channels
#       ~  movement_sd(level)^2 * chi^2_k,  k = 9 * (n - 1);
#   blink count  ~  Poisson(blink_hz(level) * duration).


def _ar1_mean_variance(n: int, sd: float, coef: float) -> float:
    d = np.arange(1, n)
    s = n + 2.0 * np.sum((n - d) * coef ** d)
    return (sd ** 2) * s / (n ** 2)


def _log_normal_pdf(x, mean, var):
    return -0.5 * (np.log(2.0 * np.pi * var) + (x - mean) ** 2 / var)


def _log_chi2_scaled_pdf(ss, scale_sq, k):
    # density of scale_sq * chi2_k evaluated at ss
    z = ss / scale_sq
    return ((k / 2.0 - 1.0) * np.log(z) - z / 2.0
            - (k / 2.0) * math.log(2.0) - math.lgamma(k / 2.0) - np.log(scale_sq))


def _log_poisson_pmf(count, rate):
    return count * np.log(rate) - rate - np.array(
        [math.lgamma(c + 1.0) for c in np.atleast_1d(count)]).reshape(np.shape(count))


def oracle_accuracy(config: SynthConfig, n_mc: int = 10_000,
                    seed: int = 1234) -> float:
    """Monte Carlo accuracy of the Bayes classifier on the summary statistics.

    Draws videos' sufficient statistics from their true class-conditional
    distributions and classifies with the exact likelihoods under equal
    class priors. This is the accuracy ceiling for any model that sees only
    the generated data.
    """
    if n_mc < 10_000:
        raise ValueError("n_mc must be >= 10000")
    rng = np.random.default_rng(seed)
    n = config.frames_per_video
    c = config.num_classes
    duration = n / config.fps
    k = 9 * (n - 1)
    v_mean = _ar1_mean_variance(n, config.affect_sd, config.affect_ar_coef)

    mu_a = np.array([config.arousal_mean(l) for l in range(c)])
    mu_v = np.array([config.valence_mean(l) for l in range(c)])
    sd_m = np.array([config.movement_sd(l) for l in range(c)])
    rates = np.maximum(np.array([config.blink_hz(l) for l in range(c)]) * duration,
                       1e-12)

    per_class = n_mc // c + (np.arange(c) < n_mc % c)
    correct = 0
    for level in range(c):
        m = int(per_class[level])
        a_bar = rng.normal(mu_a[level], math.sqrt(v_mean), size=m)
        v_bar = rng.normal(mu_v[level], math.sqrt(v_mean), size=m)
        ss = sd_m[level] ** 2 * rng.chisquare(k, size=m)
        blinks = rng.poisson(rates[level], size=m)

        log_lik = np.zeros((m, c))
        for l2 in range(c):
            log_lik[:, l2] = (
                _log_normal_pdf(a_bar, mu_a[l2], v_mean)
                + _log_normal_pdf(v_bar, mu_v[l2], v_mean)
                + _log_chi2_scaled_pdf(ss, sd_m[l2] ** 2, k)
                + _log_poisson_pmf(blinks, rates[l2])
            )
        correct += int((log_lik.argmax(axis=1) == level).sum())
    return correct / n_mc
