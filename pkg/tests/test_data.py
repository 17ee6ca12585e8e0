import numpy as np
import pytest

from engage import data, ingest
from engage.data import FeatureParams, PreparedData, predict_model, prepare_data
from engage.features import CLIP_LAYOUT, FRAME_LAYOUT
from engage.models import ModelConfig, build_model


@pytest.fixture(scope="module")
def tiny_manifest(tiny_dataset):
    return ingest.load_manifest(tiny_dataset)


class TestPrepareData:
    def test_frame_mode(self, tiny_manifest):
        prepared = prepare_data(tiny_manifest, "frame")
        assert prepared.normalizer.layout == FRAME_LAYOUT
        train = prepared.sequences["train"]
        assert len(train) == 12
        assert all(s.shape == (120, 270) and s.dtype == np.float32 for s in train)
        stacked = np.concatenate(train, axis=0)
        keep = ~prepared.normalizer.constant
        assert np.allclose(stacked.mean(axis=0)[keep], 0.0, atol=1e-4)
        assert prepared.labels["train"].dtype == np.int64

    def test_clip_mode(self, tiny_manifest):
        params = FeatureParams(clip_seconds=2.0, overlap=0.5)
        prepared = prepare_data(tiny_manifest, "clip", params)
        assert prepared.normalizer.layout == CLIP_LAYOUT
        # 120 frames, 60-frame clips, step 30 -> 3 clips
        assert all(s.shape == (3, 49) for s in prepared.sequences["train"])

    def test_supplied_normalizer_reused(self, tiny_manifest):
        first = prepare_data(tiny_manifest, "frame")
        second = prepare_data(tiny_manifest, "frame",
                              normalizer=first.normalizer)
        assert second.normalizer is first.normalizer
        a = first.sequences["test"][0]
        b = second.sequences["test"][0]
        assert np.array_equal(a, b)

    def test_batch_classes_ordinal(self, tiny_manifest):
        prepared = prepare_data(tiny_manifest, "frame")
        classes = prepared.batch_classes("train")
        assert np.array_equal(classes, prepared.labels["train"])

    def test_batch_classes_continuous_factorized(self):
        prepared = PreparedData(mode="clip", label_kind="continuous",
                                num_classes=4)
        prepared.labels["train"] = np.array([0.0, 0.33, 0.66, 1.0, 0.33])
        classes = prepared.batch_classes("train")
        assert classes.tolist() == [0, 1, 2, 3, 1]

    def test_unusable_video_skipped(self, tmp_path, caplog):
        from conftest import make_series
        valid = np.zeros(60, dtype=bool)
        valid[:20] = True
        bad = make_series(n=60, valid=valid, video_id="bad")
        good = make_series(n=60, seed=1, video_id="good")
        entries = []
        for s in (bad, good):
            path = tmp_path / f"{s.video_id}.csv"
            ingest.write_frame_file(s, path)
            entries.append(ingest.ManifestEntry(
                video_id=s.video_id, feature_file_path=path,
                label=s.label, split="train", fps=30.0))
        manifest = ingest.Manifest(entries=entries)
        series = data.load_split_series(manifest, "train")
        assert [s.video_id for s in series] == ["good"]


class TestPredict:
    def test_multiclass_probs(self):
        model = build_model(ModelConfig(mode="clip", backbone="lstm",
                                        head="multiclass", num_classes=4,
                                        lstm_sizes=(4, 3), seed=0))
        seqs = [np.random.default_rng(i).normal(size=(2, 49)).astype(np.float32)
                for i in range(5)]
        preds = predict_model(model, seqs)
        assert preds.kind == "class"
        assert preds.probs.shape == (5, 4)
        assert np.allclose(preds.probs.sum(axis=1), 1.0)
        assert np.array_equal(preds.values, preds.probs.argmax(axis=1))

    def test_regression_clipped_to_unit_interval(self):
        model = build_model(ModelConfig(mode="clip", backbone="lstm",
                                        head="regression", lstm_sizes=(4, 3),
                                        seed=0))
        import torch
        with torch.no_grad():
            model.head.bias.fill_(25.0)
        seqs = [np.zeros((2, 49), dtype=np.float32)]
        preds = predict_model(model, seqs)
        assert preds.kind == "regression"
        assert preds.values[0] == 1.0
