import json

import numpy as np
import pytest
import torch

from engage import errors, ordinal
from engage.models import ModelConfig, build_model
from engage.ordinal import (
    OrdinalModel,
    decode_bits,
    decompose_label,
    load_ordinal,
    predict_ordinal,
    recombine,
    save_ordinal,
    train_ordinal,
)
from engage.training import TrainConfig


TINY = dict(mode="clip", backbone="tcn", head="binary",
            tcn_levels=1, tcn_hidden=4, tcn_kernel=2, tcn_dropout=0.0)


def stub_ordinal(p_le: list[float], num_classes: int) -> OrdinalModel:
    """Threshold models that always output p(y <= i) = p_le[i]: zero weights,
    head bias = logit(p_le[i])."""
    members = []
    for i, p in enumerate(p_le):
        model = build_model(ModelConfig(num_classes=num_classes, seed=i, **TINY))
        with torch.no_grad():
            for param in model.parameters():
                param.zero_()
            logit = float(np.log(p / (1 - p))) if 0 < p < 1 else (
                40.0 if p >= 1 else -40.0)
            model.head.bias.fill_(logit)
        members.append(model)
    return OrdinalModel(num_classes=num_classes, models=members)


class TestDecompose:
    def test_boundary_low(self):
        assert decompose_label(0, 4).tolist() == [1, 1, 1]

    def test_middle(self):
        assert decompose_label(2, 4).tolist() == [0, 0, 1]

    def test_boundary_high(self):
        assert decompose_label(3, 4).tolist() == [0, 0, 0]

    def test_out_of_range(self):
        with pytest.raises(errors.OutOfRange):
            decompose_label(4, 4)
        with pytest.raises(errors.OutOfRange):
            decompose_label(-1, 4)

    @pytest.mark.parametrize("num_classes", [3, 4, 5])
    def test_roundtrip_and_monotone(self, num_classes):
        for y in range(num_classes):
            bits = decompose_label(y, num_classes)
            assert np.all(np.diff(bits) >= 0)  # 0...0 then 1...1
            assert decode_bits(bits) == y


class TestRecombine:
    def test_degenerate_certainty(self):
        res = recombine([0.0, 0.0, 0.0])
        assert res.raw.tolist() == [1.0, 0.0, 0.0, 0.0]
        assert res.predicted_class == 0
        assert res.reported.tolist() == [1.0, 0.0, 0.0, 0.0]

    def test_hand_example(self):
        res = recombine([0.9, 0.6, 0.2])
        assert res.raw == pytest.approx([0.1, 0.3, 0.4, 0.2])
        assert res.predicted_class == 2

    def test_non_monotone_inputs(self):
        res = recombine([0.2, 0.5, 0.1])
        assert res.raw == pytest.approx([0.8, -0.3, 0.4, 0.1])
        assert res.raw.sum() == pytest.approx(1.0, abs=1e-12)
        assert res.predicted_class == 0
        assert res.reported == pytest.approx(np.array([0.8, 0.0, 0.4, 0.1]) / 1.3)

    def test_ties_resolve_to_lower_class(self):
        res = recombine([0.5, 0.5])
        assert res.raw == pytest.approx([0.5, 0.0, 0.5])
        assert res.predicted_class == 0

    def test_input_out_of_range(self):
        with pytest.raises(errors.InputOutOfRange):
            recombine([0.5, 1.2, 0.1])
        with pytest.raises(errors.InputOutOfRange):
            recombine([-0.01, 0.5])
        with pytest.raises(errors.InputOutOfRange):
            recombine([])

    def test_raw_sums_to_one_randomized(self):
        rng = np.random.default_rng(0)
        for _ in range(2000):
            e = rng.uniform(0, 1, size=rng.integers(1, 6))
            res = recombine(e)
            assert abs(res.raw.sum() - 1.0) < 1e-9
            assert abs(res.reported.sum() - 1.0) < 1e-9

    def test_monotone_inputs_give_nonnegative_raw(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            e = np.sort(rng.uniform(0, 1, size=3))[::-1]
            res = recombine(e)
            assert np.all(res.raw >= 0)
            assert res.reported == pytest.approx(res.raw)

    def test_argmax_stable_under_reporting_clip(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            res = recombine(rng.uniform(0, 1, size=3))
            if res.raw[res.predicted_class] > 0:
                assert int(np.argmax(res.reported)) == res.predicted_class


class TestPredict:
    def test_all_thresholds_certain_low(self):
        om = stub_ordinal([1.0, 1.0, 1.0], num_classes=4)
        x = np.zeros((5, 49), dtype=np.float32)
        probs, cls = predict_ordinal(om, x)
        assert cls == 0
        assert probs[0] == pytest.approx(1.0, abs=1e-9)

    def test_all_thresholds_certain_high(self):
        om = stub_ordinal([0.0, 0.0, 0.0], num_classes=4)
        probs, cls = predict_ordinal(om, np.zeros((5, 49), dtype=np.float32))
        assert cls == 3
        assert probs[3] == pytest.approx(1.0, abs=1e-9)

    def test_stubbed_exceedance_matches_recombine(self):
        # p(y<=i) = 1 - e  for e = (0.9, 0.6, 0.2)
        om = stub_ordinal([0.1, 0.4, 0.8], num_classes=4)
        probs, cls = predict_ordinal(om, np.zeros((5, 49), dtype=np.float32))
        assert cls == 2
        assert probs == pytest.approx([0.1, 0.3, 0.4, 0.2], abs=1e-6)

    def test_batch_shapes(self):
        om = stub_ordinal([0.9, 0.5, 0.2], num_classes=4)
        seqs = [np.zeros((4, 49), dtype=np.float32) for _ in range(3)]
        probs, cls = predict_ordinal(om, seqs)
        assert probs.shape == (3, 4)
        assert cls.shape == (3,)


def separable_toy(n_per_class=20, num_classes=4, seed=0):
    """Length-1 clip sequences where feature 0 alone determines the class."""
    rng = np.random.default_rng(seed)
    seqs, labels = [], []
    for c in range(num_classes):
        for _ in range(n_per_class):
            x = np.zeros((1, 49), dtype=np.float32)
            x[0, 0] = c + rng.uniform(0.0, 0.4)
            seqs.append(x)
            labels.append(c)
    return seqs, np.array(labels)


class TestTrainOrdinal:
    def test_two_classes_rejected(self):
        cfg = ModelConfig(num_classes=2, **TINY)
        with pytest.raises(errors.InvalidConfig):
            train_ordinal([], [], [], [], cfg, TrainConfig())

    def test_four_class_toy_trains_three_models(self):
        seqs, labels = separable_toy()
        cfg = ModelConfig(num_classes=4, seed=0, **TINY)
        tcfg = TrainConfig(batch_size=16, max_epochs=100, patience=99,
                           learning_rate=0.05, seed=0,
                           loss="binary_cross_entropy")
        om, histories = train_ordinal(seqs, labels, seqs, labels, cfg, tcfg)
        assert len(om.models) == 3
        assert len(histories) == 3
        # each threshold model separates its binary task on the training set
        from engage.training import predict_outputs
        for i, model in enumerate(om.models):
            logits = predict_outputs(model, seqs).reshape(-1)
            pred = (logits > 0).astype(int)
            target = (labels <= i).astype(int)
            assert (pred == target).mean() >= 0.99

        probs, classes = predict_ordinal(om, seqs)
        assert (classes == labels).mean() >= 0.95
        assert probs.shape == (len(seqs), 4)

    def test_shared_backbone_variant(self, tmp_path):
        seqs, labels = separable_toy()
        cfg = ModelConfig(num_classes=4, seed=0, **TINY)
        tcfg = TrainConfig(batch_size=16, max_epochs=100, patience=99,
                           learning_rate=0.05, seed=0,
                           loss="binary_cross_entropy")
        om, histories = train_ordinal(seqs, labels, seqs, labels, cfg, tcfg,
                                      shared_backbone=True)
        assert om.shared is not None and om.models is None
        assert om.shared.config.output_dim == 3
        assert len(histories) == 1
        probs, classes = predict_ordinal(om, seqs)
        assert probs.shape == (len(seqs), 4)
        assert (classes == labels).mean() >= 0.9

        save_ordinal(om, tmp_path / "shared")
        loaded = load_ordinal(tmp_path / "shared")
        assert loaded.shared is not None
        p2, c2 = predict_ordinal(loaded, seqs)
        assert np.array_equal(probs, p2)
        assert np.array_equal(classes, c2)

    def test_checkpoint_roundtrip(self, tmp_path):
        om = stub_ordinal([0.9, 0.5, 0.2], num_classes=4)
        save_ordinal(om, tmp_path / "ord")
        assert ordinal.is_ordinal_checkpoint(tmp_path / "ord")
        loaded = load_ordinal(tmp_path / "ord")
        assert loaded.num_classes == 4
        x = np.random.default_rng(0).normal(size=(6, 49)).astype(np.float32)
        p1, c1 = predict_ordinal(om, x)
        p2, c2 = predict_ordinal(loaded, x)
        assert np.array_equal(p1, p2)
        assert c1 == c2

    def test_corrupt_manifest(self, tmp_path):
        om = stub_ordinal([0.9, 0.5], num_classes=3)
        save_ordinal(om, tmp_path / "ord")
        (tmp_path / "ord" / "ordinal.json").write_text("{broken")
        with pytest.raises(errors.CorruptCheckpoint):
            load_ordinal(tmp_path / "ord")

    def test_version_rejected(self, tmp_path):
        om = stub_ordinal([0.9, 0.5], num_classes=3)
        save_ordinal(om, tmp_path / "ord")
        doc = json.loads((tmp_path / "ord" / "ordinal.json").read_text())
        doc["format_version"] = "9.1"
        (tmp_path / "ord" / "ordinal.json").write_text(json.dumps(doc))
        with pytest.raises(errors.VersionMismatch):
            load_ordinal(tmp_path / "ord")
