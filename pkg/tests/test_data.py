import numpy as np
import pytest

from ringuda.data import (
    Dataset,
    EmbeddingRecord,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    make_batches,
    save_dataset,
)
from ringuda.errors import ConfigError, DataError, FormatError, NumericError


def small_dataset():
    features = np.array([[0.5, 1.0, -2.0, 3.25], [1.0, 0.0, 0.125, -1.5], [0.0, 2.0, 4.0, 8.0]])
    labels = np.array([0, 1, 2])
    return Dataset(features, labels, "source", 3)


class TestDatasetType:
    def test_records_view_round_trips(self):
        ds = small_dataset()
        records = ds.records
        assert len(records) == 3
        assert records[1].label == 1
        rebuilt = Dataset.from_records(records, num_classes=3)
        assert rebuilt == ds

    def test_unlabeled_records_map_to_none(self):
        ds = Dataset(np.ones((2, 2)), np.array([-1, 1]), "target", 2)
        assert ds.records[0].label is None
        assert ds.records[1].label == 1
        assert not ds.is_fully_labeled

    def test_nan_features_rejected(self):
        with pytest.raises(NumericError):
            Dataset(np.array([[np.nan, 1.0]]), np.array([0]), "source", 1)

    def test_label_out_of_range_rejected(self):
        with pytest.raises(DataError):
            Dataset(np.ones((1, 2)), np.array([5]), "source", 3)

    def test_mixed_record_dims_rejected(self):
        records = [
            EmbeddingRecord(np.ones(3), 0, "source"),
            EmbeddingRecord(np.ones(4), 1, "source"),
        ]
        with pytest.raises(DataError):
            Dataset.from_records(records, num_classes=2)


class TestCsvFormat:
    def test_three_row_file(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text(
            "dim=4,classes=3,domain=source\n"
            "0,0.5,1.0,-2.0,3.25\n"
            "1,1.0,0.0,0.125,-1.5\n"
            "2,0.0,2.0,4.0,8.0\n"
        )
        ds = load_dataset(path, "csv")
        assert len(ds) == 3 and ds.dim == 4
        assert list(ds.labels) == [0, 1, 2]
        assert ds == small_dataset()

    def test_empty_file_gives_empty_dataset(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        ds = load_dataset(path, "csv")
        assert len(ds) == 0

    def test_wrong_arity_is_schema_error_with_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("dim=4,classes=3,domain=source\n0,1.0,2.0,3.0,4.0,5.0\n")
        with pytest.raises(DataError, match="schema error at row 0"):
            load_dataset(path, "csv")

    def test_non_numeric_is_parse_error_with_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("dim=2,classes=2,domain=source\n0,1.0,2.0\n1,x,2.0\n")
        with pytest.raises(DataError, match="parse error at row 1"):
            load_dataset(path, "csv")

    def test_label_out_of_range_is_range_error(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("dim=2,classes=2,domain=source\n5,1.0,2.0\n")
        with pytest.raises(DataError, match="range error"):
            load_dataset(path, "csv")

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("dims=2,classes=2,domain=source\n")
        with pytest.raises(FormatError):
            load_dataset(path, "csv")

    def test_write_read_write_bytes_identical(self, tmp_path):
        cfg = SyntheticConfig(num_classes=3, dim=5, samples_per_class=10, seed=42)
        source, _ = generate_synthetic(cfg)
        first = tmp_path / "a.csv"
        second = tmp_path / "b.csv"
        save_dataset(source, first, "csv")
        save_dataset(load_dataset(first, "csv"), second, "csv")
        assert first.read_bytes() == second.read_bytes()


class TestBinaryFormat:
    def test_write_read_preserves_content(self, tmp_path):
        cfg = SyntheticConfig(num_classes=2, dim=3, samples_per_class=7, seed=5)
        _, target = generate_synthetic(cfg)
        path = tmp_path / "t.bin"
        save_dataset(target, path, "bin")
        loaded = load_dataset(path, "bin")
        assert loaded.domain == "target"
        assert loaded.num_classes == 2
        assert np.allclose(loaded.features, target.features, atol=1e-6)
        assert np.array_equal(loaded.labels, target.labels)

    def test_write_read_write_bytes_identical(self, tmp_path):
        cfg = SyntheticConfig(num_classes=4, dim=6, samples_per_class=9, seed=13)
        source, _ = generate_synthetic(cfg)
        first = tmp_path / "a.bin"
        second = tmp_path / "b.bin"
        save_dataset(source, first, "bin")
        save_dataset(load_dataset(first, "bin"), second, "bin")
        assert first.read_bytes() == second.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + bytes(30))
        with pytest.raises(FormatError):
            load_dataset(path, "bin")

    def test_truncated_payload_rejected(self, tmp_path):
        cfg = SyntheticConfig(num_classes=2, dim=3, samples_per_class=4, seed=1)
        source, _ = generate_synthetic(cfg)
        path = tmp_path / "t.bin"
        save_dataset(source, path, "bin")
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError):
            load_dataset(path, "bin")

    def test_format_inferred_from_suffix(self, tmp_path):
        ds = small_dataset()
        bin_path = tmp_path / "x.bin"
        csv_path = tmp_path / "x.csv"
        save_dataset(ds, bin_path)
        save_dataset(ds, csv_path)
        assert load_dataset(csv_path) == ds
        assert np.allclose(load_dataset(bin_path).features, ds.features, atol=1e-6)


class TestGenerateSynthetic:
    def test_identity_transform_matches_distributions(self):
        cfg = SyntheticConfig(
            num_classes=3,
            dim=8,
            samples_per_class=1000,
            covariance_scale=1.0,
            shift_magnitude=0.0,
            rotation_angle=0.0,
            scale_factor=1.0,
            seed=99,
        )
        source, target = generate_synthetic(cfg)
        # difference of two independent per-class means: std = cov * sqrt(2/n)
        bound = 3.0 * cfg.covariance_scale * np.sqrt(2.0 / cfg.samples_per_class)
        for c in range(3):
            mean_s = source.features[source.labels == c].mean(axis=0)
            mean_t = target.features[target.labels == c].mean(axis=0)
            assert np.abs(mean_s - mean_t).max() <= bound

    def test_same_seed_bitwise_identical(self):
        cfg = SyntheticConfig(num_classes=3, dim=4, samples_per_class=20, seed=123,
                              shift_magnitude=1.0, rotation_angle=0.3, scale_factor=1.2)
        a_source, a_target = generate_synthetic(cfg)
        b_source, b_target = generate_synthetic(cfg)
        assert a_source.features.tobytes() == b_source.features.tobytes()
        assert a_target.features.tobytes() == b_target.features.tobytes()

    def test_different_seed_differs(self):
        base = SyntheticConfig(num_classes=2, dim=4, samples_per_class=5, seed=1)
        other = SyntheticConfig(num_classes=2, dim=4, samples_per_class=5, seed=2)
        a, _ = generate_synthetic(base)
        b, _ = generate_synthetic(other)
        assert not np.array_equal(a.features, b.features)

    def test_linear_classifier_oracle_on_source(self):
        cfg = SyntheticConfig(
            num_classes=3, dim=8, samples_per_class=200,
            separation_radius=5.0, covariance_scale=0.5, seed=21,
        )
        source, _ = generate_synthetic(cfg)
        # independent least-squares one-hot classifier
        x = np.hstack([source.features, np.ones((len(source), 1))])
        onehot = np.eye(3)[source.labels]
        coef, *_ = np.linalg.lstsq(x, onehot, rcond=None)
        accuracy = float(((x @ coef).argmax(axis=1) == source.labels).mean())
        assert accuracy >= 0.95

    def test_target_transform_is_scale_rotate_translate(self):
        cfg = SyntheticConfig(
            num_classes=2, dim=4, samples_per_class=4000,
            separation_radius=2.0, covariance_scale=0.5,
            shift_magnitude=1.5, rotation_angle=0.7, scale_factor=2.0, seed=3,
        )
        source, target = generate_synthetic(cfg)
        # per-class means should obey mean_t ~ scale * R(mean_s) + t, so the
        # between-class mean difference obeys diff_t ~ scale * R(diff_s) and
        # norms scale accordingly (rotation preserves norms).
        diff_s = (source.features[source.labels == 0].mean(axis=0)
                  - source.features[source.labels == 1].mean(axis=0))
        diff_t = (target.features[target.labels == 0].mean(axis=0)
                  - target.features[target.labels == 1].mean(axis=0))
        assert np.linalg.norm(diff_t) == pytest.approx(
            cfg.scale_factor * np.linalg.norm(diff_s), rel=0.05
        )

    def test_single_class_rejected(self):
        with pytest.raises(ConfigError):
            generate_synthetic(SyntheticConfig(num_classes=1, dim=4, samples_per_class=3))

    def test_rotation_needs_two_dims(self):
        with pytest.raises(ConfigError):
            SyntheticConfig(num_classes=2, dim=1, samples_per_class=3, rotation_angle=0.5).validate()

    def test_more_classes_than_dims_rejected(self):
        with pytest.raises(ConfigError):
            generate_synthetic(SyntheticConfig(num_classes=5, dim=3, samples_per_class=2))


class TestMakeBatches:
    def _dataset(self, n):
        return Dataset(np.zeros((n, 2)), np.zeros(n, dtype=np.int64), "source", 1)

    def test_chunk_sizes_keep_trailing_pair(self):
        batches = make_batches(self._dataset(10), 4, seed=0, epoch=0)
        assert [len(b) for b in batches] == [4, 4, 2]

    def test_trailing_singleton_dropped(self):
        batches = make_batches(self._dataset(9), 4, seed=0, epoch=0)
        assert [len(b) for b in batches] == [4, 4]

    def test_determinism_and_epoch_variation(self):
        ds = self._dataset(20)
        a = make_batches(ds, 6, seed=5, epoch=3)
        b = make_batches(ds, 6, seed=5, epoch=3)
        c = make_batches(ds, 6, seed=5, epoch=4)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert any(not np.array_equal(x, y) for x, y in zip(a, c))

    def test_union_covers_all_indices_without_duplicates(self):
        for n, batch_size in [(17, 4), (16, 4), (5, 2), (33, 8)]:
            batches = make_batches(self._dataset(n), batch_size, seed=1, epoch=2)
            merged = np.concatenate(batches)
            assert len(set(merged.tolist())) == len(merged)
            dropped = n - len(merged)
            assert dropped in (0, 1)
            assert dropped == (1 if n % batch_size == 1 else 0)

    def test_batch_size_below_two_rejected(self):
        with pytest.raises(ConfigError):
            make_batches(self._dataset(4), 1, seed=0, epoch=0)
