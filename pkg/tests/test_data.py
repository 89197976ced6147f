"""IDX parsing, partitioning, noise skew, splitting, and synthetic sources."""

import struct
from collections import Counter

import numpy as np
import pytest

from feddisk import data
from feddisk.errors import ConfigError, IdxFormatError


def sample_dataset(n=12, dim=4, arity=3, seed=0):
    rng = np.random.default_rng(seed)
    return data.LabeledDataset(
        images=rng.integers(0, 256, size=(n, dim)).astype(float) / 255.0,
        labels=rng.integers(0, arity, size=n),
        label_arity=arity,
        image_shape=(2, 2),
    )


def content_multiset(ds):
    return Counter(
        (row.tobytes(), int(label)) for row, label in zip(ds.images, ds.labels)
    )


class TestIdx:
    def test_round_trip_is_byte_identical(self, tmp_path):
        ds = sample_dataset(n=4)
        img1, lbl1 = tmp_path / "a-img", tmp_path / "a-lbl"
        img2, lbl2 = tmp_path / "b-img", tmp_path / "b-lbl"
        data.save_idx(ds, str(img1), str(lbl1))
        loaded = data.load_idx(str(img1), str(lbl1))
        data.save_idx(loaded, str(img2), str(lbl2))
        assert img1.read_bytes() == img2.read_bytes()
        assert lbl1.read_bytes() == lbl2.read_bytes()

    def test_label_bytes_survive_unchanged(self, tmp_path):
        # fixture laid out by hand against the published format
        img = struct.pack(">IIII", 0x00000803, 2, 1, 2) + bytes([0, 255, 128, 7])
        lbl = struct.pack(">II", 0x00000801, 2) + bytes([7, 1])
        (tmp_path / "img").write_bytes(img)
        (tmp_path / "lbl").write_bytes(lbl)
        ds = data.load_idx(str(tmp_path / "img"), str(tmp_path / "lbl"))
        np.testing.assert_array_equal(ds.labels, [7, 1])
        np.testing.assert_allclose(ds.images[0], [0.0, 1.0])
        assert ds.images[1, 0] == pytest.approx(128 / 255)

    def test_empty_payload_with_valid_header(self, tmp_path):
        img = struct.pack(">IIII", 0x00000803, 0, 28, 28)
        lbl = struct.pack(">II", 0x00000801, 0)
        (tmp_path / "img").write_bytes(img)
        (tmp_path / "lbl").write_bytes(lbl)
        ds = data.load_idx(str(tmp_path / "img"), str(tmp_path / "lbl"))
        assert ds.n == 0 and ds.dim == 784

    def test_bad_magic_reports_offset(self, tmp_path):
        (tmp_path / "img").write_bytes(struct.pack(">IIII", 0xDEADBEEF, 0, 1, 1))
        (tmp_path / "lbl").write_bytes(struct.pack(">II", 0x00000801, 0))
        with pytest.raises(IdxFormatError, match="byte offset 0"):
            data.load_idx(str(tmp_path / "img"), str(tmp_path / "lbl"))

    def test_truncated_payload_reports_offset(self, tmp_path):
        img = struct.pack(">IIII", 0x00000803, 2, 1, 2) + bytes([0, 255])  # 2 short
        (tmp_path / "img").write_bytes(img)
        (tmp_path / "lbl").write_bytes(struct.pack(">II", 0x00000801, 2) + bytes([1, 2]))
        with pytest.raises(IdxFormatError, match="byte offset 18"):
            data.load_idx(str(tmp_path / "img"), str(tmp_path / "lbl"))

    def test_count_mismatch_rejected(self, tmp_path):
        img = struct.pack(">IIII", 0x00000803, 1, 1, 1) + bytes([9])
        lbl = struct.pack(">II", 0x00000801, 2) + bytes([1, 2])
        (tmp_path / "img").write_bytes(img)
        (tmp_path / "lbl").write_bytes(lbl)
        with pytest.raises(IdxFormatError, match="count mismatch"):
            data.load_idx(str(tmp_path / "img"), str(tmp_path / "lbl"))


class TestPartition:
    def test_single_client_gets_everything(self):
        ds = sample_dataset()
        [shard] = data.partition_equal(ds, 1, seed=0)
        assert content_multiset(shard) == content_multiset(ds)

    def test_sizes_differ_by_at_most_one(self):
        ds = sample_dataset(n=10)
        sizes = sorted(s.n for s in data.partition_equal(ds, 3, seed=1))
        assert sizes == [3, 3, 4]

    def test_partition_preserves_content_multiset(self):
        ds = sample_dataset(n=50)
        shards = data.partition_equal(ds, 7, seed=2)
        combined = Counter()
        for s in shards:
            combined += content_multiset(s)
        assert combined == content_multiset(ds)

    def test_more_clients_than_samples_rejected(self):
        with pytest.raises(ConfigError):
            data.partition_equal(sample_dataset(n=3), 5, seed=0)

    def test_partition_is_deterministic(self):
        ds = sample_dataset(n=30)
        a = data.partition_indices(30, 4, seed=9)
        b = data.partition_indices(30, 4, seed=9)
        for ia, ib in zip(a, b):
            np.testing.assert_array_equal(ia, ib)


class TestNoiseSkew:
    def test_client_zero_is_unchanged(self):
        ds = sample_dataset()
        noised = data.apply_noise_skew(ds, k=0, n_clients=10, x=0.5, seed=0)
        np.testing.assert_array_equal(noised.images, ds.images)

    def test_hundred_client_convention(self):
        assert data.noise_variance_for_client(99, 100, 0.3) == pytest.approx(0.297)
        assert data.noise_variance_for_client(0, 100, 0.3) == 0.0

    def test_reindexing_preserves_variance_range(self):
        # at any client count the top client gets 0.99x
        for k_total in (2, 5, 10, 37):
            top = data.noise_variance_for_client(k_total - 1, k_total, 1.0)
            assert top == pytest.approx(0.99)

    def test_variance_is_monotone_in_client_index(self):
        variances = [data.noise_variance_for_client(k, 10, 0.3) for k in range(10)]
        assert all(b >= a for a, b in zip(variances, variances[1:]))

    def test_empirical_noise_variance_matches_formula(self):
        # small variance so the [0,1] clip never bites and noised - clean is
        # exactly the drawn noise
        target = data.noise_variance_for_client(9, 100, 0.01)
        ds = data.LabeledDataset(
            images=np.full((100, 100), 0.5), labels=np.zeros(100, dtype=int), label_arity=1
        )
        noised = data.apply_noise_skew(ds, k=9, n_clients=100, x=0.01, seed=3)
        diff = noised.images - ds.images
        assert abs(diff.var() - target) / target < 0.05

    def test_output_stays_in_unit_interval(self):
        ds = sample_dataset(n=40, dim=25)
        noised = data.apply_noise_skew(ds, k=9, n_clients=10, x=0.5, seed=4)
        assert noised.images.min() >= 0.0 and noised.images.max() <= 1.0


class TestSplit:
    def test_85_15_on_round_number(self):
        ds = sample_dataset(n=100, arity=2)
        train, test = data.split_train_test(ds, seed=0)
        assert (train.n, test.n) == (85, 15)

    def test_single_sample_warns_and_keeps_it_in_train(self):
        ds = sample_dataset(n=1)
        with pytest.warns(UserWarning):
            train, test = data.split_train_test(ds, seed=0)
        assert (train.n, test.n) == (1, 0)

    def test_split_preserves_content_multiset(self):
        ds = sample_dataset(n=47, arity=4)
        train, test = data.split_train_test(ds, seed=5)
        assert content_multiset(train) + content_multiset(test) == content_multiset(ds)

    def test_stratification_keeps_class_proportions(self):
        rng = np.random.default_rng(6)
        labels = np.repeat([0, 1, 2], [60, 30, 10])
        ds = data.LabeledDataset(
            images=rng.uniform(size=(100, 3)), labels=labels, label_arity=3
        )
        train, _ = data.split_train_test(ds, seed=7)
        counts = np.bincount(train.labels, minlength=3)
        np.testing.assert_array_equal(counts, [51, 26, 8])  # largest remainder on 85

    def test_split_is_deterministic(self):
        ds = sample_dataset(n=40)
        a_train, a_test = data.split_train_test(ds, seed=8)
        b_train, b_test = data.split_train_test(ds, seed=8)
        np.testing.assert_array_equal(a_train.images, b_train.images)
        np.testing.assert_array_equal(a_test.labels, b_test.labels)


class TestMixture:
    def test_degenerate_component_gives_identical_samples(self):
        spec = data.MixtureSpec(weights=[1.0], means=[0.3], stds=[0.0])
        enc = data.synth_gaussian_mixture(spec, 20, seed=0)
        assert np.all(enc.values == 0.3)
        assert np.all(enc.dataset.images == enc.dataset.images[0])

    def test_mixture_mean_matches_moment(self):
        spec = data.MixtureSpec(weights=[0.5, 0.5], means=[0.0, 2.0], stds=[1.0, 1.0])
        enc = data.synth_gaussian_mixture(spec, 10_000, seed=1)
        assert enc.values.mean() == pytest.approx(1.0, abs=0.05)

    def test_true_density_integrates_to_one(self):
        spec = data.MixtureSpec(weights=[0.5, 0.5], means=[0.0, 2.0], stds=[1.0, 1.0])
        lo, hi = spec.support_bounds()
        grid = np.linspace(lo, hi, 2001)
        integral = np.trapezoid(data.mixture_pdf(spec, grid), grid)
        assert integral == pytest.approx(1.0, abs=0.01)

    def test_encoding_is_one_hot_over_bins(self):
        spec = data.MixtureSpec(weights=[1.0], means=[0.0], stds=[1.0], bins=16)
        enc = data.synth_gaussian_mixture(spec, 500, seed=2)
        assert enc.dataset.images.shape == (500, 16)
        np.testing.assert_array_equal(enc.dataset.images.sum(axis=1), 1.0)

    def test_invalid_weights_rejected(self):
        with pytest.raises(ConfigError):
            data.MixtureSpec(weights=[0.7, 0.7], means=[0.0, 1.0], stds=[1.0, 1.0])


class TestBlobs:
    def test_values_bounded_and_balanced(self):
        ds = data.synth_blobs(100, classes=10, dim=8, seed=0)
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
        np.testing.assert_array_equal(np.bincount(ds.labels), np.full(10, 10))

    def test_blobs_are_deterministic(self):
        a = data.synth_blobs(60, classes=3, dim=5, seed=4)
        b = data.synth_blobs(60, classes=3, dim=5, seed=4)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.labels, b.labels)
