import numpy as np
import pytest

from spdmetrics import datasets as ds
from spdmetrics.exceptions import (
    BadMagic,
    DimensionMismatch,
    InvalidInput,
    NotPositiveDefinite,
    StratificationError,
)
from spdmetrics.geometry import LogEuclideanMetric, make_metric

from conftest import rand_spd


def small_dataset(rng, dim=3, per_class=4, classes=2):
    mats = np.stack([rand_spd(rng, dim) for _ in range(per_class * classes)])
    labels = np.repeat(np.arange(classes), per_class)
    return ds.SpdDataset(mats, labels, classes, name="unit")


class TestBinaryFormat:
    @pytest.mark.parametrize("dim", [2, 10, 50])
    def test_round_trip_bit_exact(self, rng, tmp_path, dim):
        data = small_dataset(rng, dim=dim, per_class=3)
        path = tmp_path / "d.spdd"
        ds.save(data, path)
        loaded = ds.load(path)
        np.testing.assert_array_equal(loaded.matrices, data.matrices)
        np.testing.assert_array_equal(loaded.labels, data.labels)
        assert loaded.class_count == data.class_count
        # a second save of the loaded set reproduces the file bytes
        path2 = tmp_path / "d2.spdd"
        ds.save(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_empty_dataset_header_only(self, tmp_path):
        data = ds.SpdDataset(np.zeros((0, 4, 4)), np.zeros(0, np.int64), 0)
        path = tmp_path / "empty.spdd"
        ds.save(data, path)
        assert path.stat().st_size == 20
        assert len(ds.load(path)) == 0

    def test_label_out_of_range_rejected(self, rng):
        mats = np.stack([rand_spd(rng, 2)])
        with pytest.raises(InvalidInput):
            ds.SpdDataset(mats, np.array([5]), 2)

    def test_corrupted_magic(self, rng, tmp_path):
        path = tmp_path / "bad.spdd"
        data = small_dataset(rng)
        ds.save(data, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"JUNK"
        path.write_bytes(bytes(raw))
        with pytest.raises(BadMagic):
            ds.load(path)

    def test_truncated_file(self, rng, tmp_path):
        path = tmp_path / "trunc.spdd"
        ds.save(small_dataset(rng), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DimensionMismatch):
            ds.load(path)

    def test_near_singular_policies(self, rng, tmp_path):
        mats = np.stack([np.diag([1.0, 0.0]), np.eye(2)])
        path = tmp_path / "sing.spdd"
        # bypass the validating constructor via direct write
        good = ds.SpdDataset(np.stack([np.eye(2)] * 2), np.array([0, 1]), 2)
        ds.save(good, path)
        raw = bytearray(path.read_bytes())
        bad_bytes = np.array([1.0, 0.0, 0.0, 0.0], "<f8").tobytes()
        raw[24 : 24 + 32] = bad_bytes
        path.write_bytes(bytes(raw))
        with pytest.raises(NotPositiveDefinite):
            ds.load(path, repair="reject")
        fixed = ds.load(path, repair="jitter")
        assert fixed.repaired[0] and not fixed.repaired[1]
        assert np.linalg.eigvalsh(fixed.matrices[0])[0] > 0

    def test_csv_round_trip(self, rng, tmp_path):
        data = small_dataset(rng)
        path = tmp_path / "d.csv"
        ds.save_csv(data, path)
        loaded = ds.load_csv(path)
        np.testing.assert_array_equal(loaded.matrices, data.matrices)
        np.testing.assert_array_equal(loaded.labels, data.labels)


class TestSynthetic:
    def test_deterministic_bytes(self, tmp_path):
        spec = ds.SyntheticSpec(dim=5, class_count=2, samples_per_class=4, seed=3)
        p1, p2 = tmp_path / "a.spdd", tmp_path / "b.spdd"
        ds.save(ds.generate_synthetic(spec), p1)
        ds.save(ds.generate_synthetic(spec), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_all_samples_spd(self):
        data = ds.generate_synthetic(ds.SyntheticSpec(seed=1))
        assert np.all(np.linalg.eigvalsh(data.matrices)[:, 0] > 0)

    def test_within_vs_between_distance_ratio(self):
        spec = ds.SyntheticSpec(
            dim=6, class_count=3, samples_per_class=8, rotation_noise=0.0, seed=2
        )
        data = ds.generate_synthetic(spec)
        metric = make_metric("alem", alpha=np.e, dim=6)
        images = np.stack([metric.forward(S) for S in data.matrices])
        within, between = [], []
        for i in range(len(data)):
            for j in range(i + 1, len(data)):
                d = np.linalg.norm(images[i] - images[j])
                (within if data.labels[i] == data.labels[j] else between).append(d)
        assert np.mean(within) / np.mean(between) < 0.3

    def test_separability_monotone_in_spread(self):
        def ratio(spread):
            spec = ds.SyntheticSpec(
                dim=6, class_count=3, samples_per_class=6,
                eigenvalue_spread=spread, rotation_noise=0.0, seed=4,
            )
            data = ds.generate_synthetic(spec)
            metric = LogEuclideanMetric()
            images = np.stack([metric.forward(S) for S in data.matrices])
            within, between = [], []
            for i in range(len(data)):
                for j in range(i + 1, len(data)):
                    d = np.linalg.norm(images[i] - images[j])
                    same = data.labels[i] == data.labels[j]
                    (within if same else between).append(d)
            return np.mean(between) / np.mean(within)

        ratios = [ratio(s) for s in (0.5, 1.5, 4.0)]
        assert ratios[0] < ratios[1] < ratios[2]

    def test_invalid_spec(self):
        with pytest.raises(InvalidInput):
            ds.SyntheticSpec(eigenvalue_spread=0.0)


class TestSplit:
    def test_even_split_counts(self, rng):
        data = small_dataset(rng, per_class=10, classes=2)
        train, test = ds.train_test_split(data, 0.5, seed=0)
        for c in range(2):
            assert (train.labels == c).sum() == 5
            assert (test.labels == c).sum() == 5

    def test_union_is_original_multiset(self, rng):
        data = small_dataset(rng, per_class=5, classes=3)
        train, test = ds.train_test_split(data, 0.4, seed=7)
        merged = np.concatenate([train.matrices, test.matrices])
        key = lambda arr: sorted(map(tuple, arr.reshape(len(arr), -1)))
        assert key(merged) == key(np.asarray(data.matrices))

    def test_disjoint_across_seeds(self, rng):
        data = small_dataset(rng, per_class=6, classes=2)
        for seed in range(100):
            train, test = ds.train_test_split(data, 0.5, seed=seed)
            train_keys = {tuple(m.ravel()) for m in train.matrices}
            test_keys = {tuple(m.ravel()) for m in test.matrices}
            assert not train_keys & test_keys
            assert len(train) + len(test) == len(data)

    def test_tiny_class_rejected(self, rng):
        mats = np.stack([rand_spd(rng, 2) for _ in range(3)])
        data = ds.SpdDataset(mats, np.array([0, 0, 1]), 2)
        with pytest.raises(StratificationError):
            ds.train_test_split(data, 0.5, seed=0)

    def test_bad_fraction(self, rng):
        with pytest.raises(InvalidInput):
            ds.train_test_split(small_dataset(rng), 1.5, seed=0)


class TestMatrixText:
    def test_round_trip_exact(self, rng, tmp_path):
        M = rand_spd(rng, 4)
        path = tmp_path / "m.txt"
        ds.save_matrix_text(M, path)
        np.testing.assert_array_equal(ds.load_matrix_text(path), M)

    def test_dimension_line(self, tmp_path):
        path = tmp_path / "m.txt"
        ds.save_matrix_text(np.eye(3), path)
        assert path.read_text().splitlines()[0] == "3"
