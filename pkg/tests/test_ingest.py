import numpy as np
import pytest

from engage import errors, ingest
from engage.ingest import FRAME_FILE_COLUMNS, Label, Manifest, ManifestEntry

from conftest import make_series


def write_series(tmp_path, series, name="video.csv"):
    path = tmp_path / name
    ingest.write_frame_file(series, path)
    return path


class TestParse:
    def test_all_valid_row_count(self, tmp_path):
        path = write_series(tmp_path, make_series(n=300))
        series = ingest.parse_frame_file(path)
        assert len(series) == 300
        assert series.valid.all()
        assert series.video_id == "video"

    def test_invalid_flags_copied(self, tmp_path):
        valid = np.ones(300, dtype=bool)
        valid[10:15] = False
        path = write_series(tmp_path, make_series(n=300, valid=valid))
        series = ingest.parse_frame_file(path)
        assert len(series) == 300
        assert (~series.valid).sum() == 5
        assert not series.record(12).valid
        assert series.record(9).valid

    def test_missing_column(self, tmp_path):
        path = write_series(tmp_path, make_series(n=5))
        lines = path.read_text().splitlines()
        cols = lines[0].split(",")
        drop = cols.index("latent_255")
        out = [",".join(c for i, c in enumerate(ln.split(",")) if i != drop)
               for ln in lines]
        path.write_text("\n".join(out) + "\n")
        with pytest.raises(errors.MissingColumn):
            ingest.parse_frame_file(path)

    def test_reordered_columns_rejected(self, tmp_path):
        path = write_series(tmp_path, make_series(n=5))
        lines = path.read_text().splitlines()
        cols = lines[0].split(",")
        cols[0], cols[1] = cols[1], cols[0]
        lines[0] = ",".join(cols)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(errors.MissingColumn):
            ingest.parse_frame_file(path)

    def test_malformed_cell(self, tmp_path):
        path = write_series(tmp_path, make_series(n=5))
        text = path.read_text().splitlines()
        row = text[3].split(",")
        row[7] = "not_a_number"
        text[3] = ",".join(row)
        path.write_text("\n".join(text) + "\n")
        with pytest.raises(errors.MalformedRow):
            ingest.parse_frame_file(path)

    def test_short_row(self, tmp_path):
        path = write_series(tmp_path, make_series(n=5))
        text = path.read_text().splitlines()
        text[2] = ",".join(text[2].split(",")[:-3])
        path.write_text("\n".join(text) + "\n")
        with pytest.raises(errors.MalformedRow):
            ingest.parse_frame_file(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(errors.EmptyFile):
            ingest.parse_frame_file(path)
        path.write_text(",".join(FRAME_FILE_COLUMNS) + "\n")
        with pytest.raises(errors.EmptyFile):
            ingest.parse_frame_file(path)

    def test_non_increasing_frame_index(self, tmp_path):
        series = make_series(n=5)
        path = write_series(tmp_path, series)
        text = path.read_text().splitlines()
        text[3] = "1," + text[3].split(",", 1)[1]
        path.write_text("\n".join(text) + "\n")
        with pytest.raises(errors.MalformedRow):
            ingest.parse_frame_file(path)

    def test_bad_success_value(self, tmp_path):
        path = write_series(tmp_path, make_series(n=5))
        text = path.read_text().splitlines()
        text[2] = text[2].split(",")[0] + ",2," + text[2].split(",", 2)[2]
        path.write_text("\n".join(text) + "\n")
        with pytest.raises(errors.MalformedRow):
            ingest.parse_frame_file(path)

    def test_affect_out_of_range_on_valid_row(self, tmp_path):
        series = make_series(n=5)
        series.values[2, 0] = 1.5
        path = write_series(tmp_path, series)
        with pytest.raises(errors.MalformedRow):
            ingest.parse_frame_file(path)

    def test_nan_allowed_on_invalid_row(self, tmp_path):
        valid = np.ones(5, dtype=bool)
        valid[2] = False
        series = make_series(n=5, valid=valid)
        series.values[2, :] = np.nan
        path = write_series(tmp_path, series)
        parsed = ingest.parse_frame_file(path)
        assert np.isnan(parsed.values[2]).all()

    def test_roundtrip_identity(self, tmp_path):
        valid = np.ones(40, dtype=bool)
        valid[7:9] = False
        series = make_series(n=40, seed=5, valid=valid)
        path = write_series(tmp_path, series)
        once = ingest.parse_frame_file(path)
        path2 = write_series(tmp_path, once, "again.csv")
        twice = ingest.parse_frame_file(path2)
        assert np.array_equal(once.values, twice.values)
        assert np.array_equal(once.frame_index, twice.frame_index)
        assert np.array_equal(once.valid, twice.valid)


class TestRepair:
    def test_all_valid_is_identity(self):
        series = make_series(n=300)
        repaired, report = ingest.repair_series(series)
        assert report.valid_fraction == 1.0
        assert report.usable
        assert report.filled_count == 0
        assert np.array_equal(repaired.values, series.values)

    def test_forward_fill_block(self):
        valid = np.ones(300, dtype=bool)
        valid[10:15] = False
        series = make_series(n=300, valid=valid)
        repaired, report = ingest.repair_series(series)
        for i in range(10, 15):
            assert np.array_equal(repaired.values[i], series.values[9])
        assert report.valid_fraction == pytest.approx(295 / 300)
        assert report.filled_count == 5
        assert report.usable

    def test_leading_run_backfills(self):
        valid = np.ones(20, dtype=bool)
        valid[:4] = False
        series = make_series(n=20, valid=valid)
        repaired, _ = ingest.repair_series(series)
        for i in range(4):
            assert np.array_equal(repaired.values[i], series.values[4])

    def test_unusable_below_half(self):
        valid = np.zeros(300, dtype=bool)
        valid[:100] = True
        series = make_series(n=300, valid=valid)
        _, report = ingest.repair_series(series)
        assert not report.usable
        assert report.valid_fraction == pytest.approx(1 / 3, abs=1e-9)

    def test_idempotent(self):
        valid = np.ones(50, dtype=bool)
        valid[[0, 1, 17, 30, 31, 32]] = False
        series = make_series(n=50, seed=2, valid=valid)
        once, report1 = ingest.repair_series(series)
        twice, report2 = ingest.repair_series(once)
        assert np.array_equal(once.values, twice.values)
        assert report1.valid_fraction == report2.valid_fraction

    def test_valid_rows_never_changed(self):
        valid = np.ones(50, dtype=bool)
        valid[5:40] = False
        series = make_series(n=50, seed=3, valid=valid)
        repaired, _ = ingest.repair_series(series)
        assert np.array_equal(repaired.values[valid], series.values[valid])

    def test_all_invalid_raises(self):
        series = make_series(n=10, valid=np.zeros(10, dtype=bool))
        with pytest.raises(errors.AllFramesInvalid):
            ingest.repair_series(series)


class TestLabel:
    def test_ordinal_ok(self):
        lab = Label(kind="ordinal_class", num_classes=4, class_value=2)
        assert Label.from_dict(lab.to_dict()) == lab

    def test_continuous_ok(self):
        lab = Label(kind="continuous", num_classes=4, real_value=0.66)
        assert Label.from_dict(lab.to_dict()) == lab

    @pytest.mark.parametrize("kwargs", [
        dict(kind="ordinal_class", class_value=4, num_classes=4),
        dict(kind="ordinal_class", real_value=0.5, num_classes=4),
        dict(kind="continuous", real_value=1.2, num_classes=4),
        dict(kind="continuous", class_value=1, num_classes=4),
        dict(kind="banana", class_value=1, num_classes=4),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            Label(**kwargs)


class TestManifest:
    def _manifest(self, tmp_path, labels, n=3):
        entries = []
        splits = ["train", "validation", "test"]
        for i in range(n):
            series = make_series(n=10, seed=i, video_id=f"v{i}")
            path = write_series(tmp_path, series, f"v{i}.csv")
            entries.append(ManifestEntry(
                video_id=f"v{i}", feature_file_path=path,
                label=labels[i % len(labels)],
                split=splits[i % 3], fps=30.0))
        mpath = tmp_path / "manifest.json"
        ingest.write_manifest(Manifest(entries=entries), mpath)
        return mpath

    def test_three_entries_one_per_split(self, tmp_path):
        lab = Label(kind="ordinal_class", num_classes=4, class_value=1)
        manifest = ingest.load_manifest(self._manifest(tmp_path, [lab]))
        for split in ("train", "validation", "test"):
            assert len(manifest.by_split(split)) == 1
        assert manifest.label_kind == "ordinal_class"
        assert manifest.num_classes == 4

    def test_duplicate_video_id(self, tmp_path):
        lab = Label(kind="ordinal_class", num_classes=4, class_value=1)
        mpath = self._manifest(tmp_path, [lab])
        import json
        doc = json.loads(mpath.read_text())
        doc["entries"].append(dict(doc["entries"][0]))
        mpath.write_text(json.dumps(doc))
        with pytest.raises(errors.DuplicateVideoId):
            ingest.load_manifest(mpath)

    def test_mixed_label_kinds(self, tmp_path):
        labels = [Label(kind="ordinal_class", num_classes=4, class_value=1),
                  Label(kind="continuous", num_classes=4, real_value=0.33)]
        with pytest.raises(errors.MixedLabelKinds):
            ingest.load_manifest(self._manifest(tmp_path, labels))

    def test_mixed_num_classes(self, tmp_path):
        labels = [Label(kind="ordinal_class", num_classes=4, class_value=1),
                  Label(kind="ordinal_class", num_classes=5, class_value=1)]
        with pytest.raises(errors.MixedLabelKinds):
            ingest.load_manifest(self._manifest(tmp_path, labels))

    def test_unresolvable_path(self, tmp_path):
        lab = Label(kind="ordinal_class", num_classes=4, class_value=1)
        mpath = self._manifest(tmp_path, [lab])
        import json
        doc = json.loads(mpath.read_text())
        doc["entries"][0]["feature_file_path"] = "nowhere/missing.csv"
        mpath.write_text(json.dumps(doc))
        with pytest.raises(errors.UnresolvablePath):
            ingest.load_manifest(mpath)

    def test_relative_paths_resolve_against_manifest_dir(self, tmp_path):
        lab = Label(kind="ordinal_class", num_classes=4, class_value=1)
        mpath = self._manifest(tmp_path, [lab])
        manifest = ingest.load_manifest(mpath)
        assert all(e.feature_file_path.is_file() for e in manifest.entries)
