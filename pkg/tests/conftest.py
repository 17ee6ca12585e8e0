import time

import numpy as np
import pytest

from engage import synth
from engage.ingest import FrameSeries, Label


@pytest.fixture(scope="session")
def default_dataset(tmp_path_factory):
    """The default synthetic benchmark (4 classes x 50 videos x 300 frames,
    seed 7). Generated once per session; returns (manifest_path, gen_seconds)."""
    out = tmp_path_factory.mktemp("synth_default")
    t0 = time.perf_counter()
    manifest_path = synth.generate(synth.SynthConfig(), out)
    return manifest_path, time.perf_counter() - t0


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small ordinal dataset for CLI and pipeline tests."""
    out = tmp_path_factory.mktemp("synth_tiny")
    config = synth.SynthConfig(videos_per_class=5, frames_per_video=120, seed=3)
    return synth.generate(config, out)


def make_series(n=50, fps=30.0, seed=0, video_id="vid", label=None,
                valid=None) -> FrameSeries:
    """Random but finite FrameSeries for unit tests."""
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(n, 270))
    values[:, 0] = np.clip(values[:, 0] * 0.3, -1, 1)   # valence
    values[:, 1] = np.clip(values[:, 1] * 0.3, -1, 1)   # arousal
    values[:, 258] = np.abs(values[:, 258])             # au45 >= 0
    if label is None:
        label = Label(kind="ordinal_class", num_classes=4, class_value=1)
    if valid is None:
        valid = np.ones(n, dtype=bool)
    return FrameSeries(video_id=video_id, fps=fps,
                       frame_index=np.arange(n, dtype=np.int64),
                       valid=np.asarray(valid, dtype=bool),
                       values=values, label=label)
