"""IDX/CIFAR parsing, pooling, resizing, filtering, splitting."""
import gzip
import struct

import numpy as np
import pytest

from qdeq.datasets import (
    ImageDataset,
    avg_pool,
    dataset_available,
    filter_classes,
    load_cifar_binary,
    load_idx,
    prepare_bundle,
    resize_bilinear,
    split,
)
from qdeq.errors import DataFormatError, DimensionError

from conftest import _idx_image_bytes, _idx_label_bytes


@pytest.fixture
def one_image_idx(tmp_path):
    image = np.zeros((1, 28, 28), dtype=np.uint8)
    image[0, 3, 4] = 255
    (tmp_path / "imgs").write_bytes(_idx_image_bytes(image))
    (tmp_path / "lbls").write_bytes(_idx_label_bytes(np.array([7], dtype=np.uint8)))
    return tmp_path / "imgs", tmp_path / "lbls"


class TestLoadIdx:
    def test_single_image_scaling(self, one_image_idx):
        ds = load_idx(*one_image_idx)
        assert ds.images.shape == (1, 28, 28)
        assert ds.images[0, 3, 4] == 1.0
        assert ds.images.sum() == 1.0
        assert ds.labels[0] == 7

    def test_gzip_transparent(self, tmp_path, one_image_idx):
        img_path, lbl_path = one_image_idx
        gz_img = tmp_path / "imgs.gz"
        gz_lbl = tmp_path / "lbls.gz"
        gz_img.write_bytes(gzip.compress(img_path.read_bytes()))
        gz_lbl.write_bytes(gzip.compress(lbl_path.read_bytes()))
        ds = load_idx(gz_img, gz_lbl)
        assert ds.images[0, 3, 4] == 1.0

    def test_image_magic_passed_as_labels(self, tmp_path, one_image_idx):
        img_path, _ = one_image_idx
        with pytest.raises(DataFormatError, match="magic"):
            load_idx(img_path, img_path)

    def test_wrong_image_magic_reports_value(self, tmp_path):
        bad = struct.pack(">IIII", 0x00000801, 1, 2, 2) + bytes(4)
        path = tmp_path / "bad"
        path.write_bytes(bad)
        with pytest.raises(DataFormatError, match="0x00000801"):
            load_idx(path, path)

    def test_truncated_file(self, tmp_path, one_image_idx):
        img_path, lbl_path = one_image_idx
        clipped = tmp_path / "clipped"
        clipped.write_bytes(img_path.read_bytes()[:-10])
        with pytest.raises(DataFormatError, match="bytes"):
            load_idx(clipped, lbl_path)

    def test_count_mismatch(self, tmp_path, one_image_idx):
        img_path, _ = one_image_idx
        two_labels = tmp_path / "two"
        two_labels.write_bytes(_idx_label_bytes(np.array([1, 2], dtype=np.uint8)))
        with pytest.raises(DataFormatError, match="labels"):
            load_idx(img_path, two_labels)


class TestLoadCifar:
    def test_zero_record(self, tmp_path):
        path = tmp_path / "batch.bin"
        path.write_bytes(bytes(3073))
        ds = load_cifar_binary(path)
        assert ds.images.shape == (1, 32, 32)
        assert ds.images.sum() == 0.0 and ds.labels[0] == 0

    def test_luma_conversion(self, tmp_path):
        record = bytearray(3073)
        record[0] = 3
        record[1 : 1 + 1024] = b"\xff" * 1024  # pure red
        path = tmp_path / "red.bin"
        path.write_bytes(bytes(record))
        ds = load_cifar_binary(path)
        assert np.allclose(ds.images[0], 0.299, atol=1e-12)
        assert ds.labels[0] == 3

    def test_bad_length(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(bytes(3072))
        with pytest.raises(DataFormatError, match="multiple"):
            load_cifar_binary(path)


class TestAvgPool:
    def test_constant(self):
        out = avg_pool(np.full((28, 28), 0.37), 4)
        assert np.allclose(out, 0.37)

    def test_single_hot_pixel(self):
        image = np.zeros((28, 28))
        image[0, 0] = 1.0
        out = avg_pool(image, 4)
        assert out[0, 0] == pytest.approx(1.0 / 49.0, rel=1e-12)
        assert out.sum() == pytest.approx(1.0 / 49.0, rel=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        image = rng.random((28, 28))
        out = avg_pool(image, 4)
        for i in range(4):
            for j in range(4):
                window = image[7 * i : 7 * i + 7, 7 * j : 7 * j + 7]
                assert abs(out[i, j] - window.mean()) < 1e-12

    def test_indivisible(self):
        with pytest.raises(DimensionError):
            avg_pool(np.zeros((28, 28)), 5)


class TestResizeBilinear:
    def test_constant(self):
        out = resize_bilinear(np.full((28, 28), 0.6), 10)
        assert np.allclose(out, 0.6)

    def test_identity_when_sizes_match(self):
        rng = np.random.default_rng(1)
        image = rng.random((10, 10))
        assert np.allclose(resize_bilinear(image, 10), image, atol=1e-12)

    def test_linear_ramp_preserved(self):
        rows = np.linspace(0.0, 1.0, 28)
        cols = np.linspace(0.0, 0.5, 28)
        image = rows[:, None] + cols[None, :]
        out = resize_bilinear(image, 10)
        expected = np.linspace(0.0, 1.0, 10)[:, None] + np.linspace(0.0, 0.5, 10)[None, :]
        assert np.abs(out - expected).max() < 1e-6

    def test_range_preserved(self):
        rng = np.random.default_rng(2)
        out = resize_bilinear(rng.random((32, 32)), 10)
        assert out.min() >= -1e-12 and out.max() <= 1.0 + 1e-12


class TestFilterAndSplit:
    def _dataset(self, labels):
        labels = np.asarray(labels, dtype=np.int64)
        images = np.arange(labels.size, dtype=np.float64).reshape(-1, 1, 1) / labels.size
        return ImageDataset(images, labels, "toy")

    def test_remap_ascending(self):
        ds = filter_classes(self._dataset([0, 3, 6, 9, 9, 1]), {0, 3, 6, 9})
        assert ds.labels.tolist() == [0, 1, 2, 3, 3]

    def test_keep_all_is_identity_remap(self):
        ds = filter_classes(self._dataset([2, 0, 1]), {0, 1, 2})
        assert ds.labels.tolist() == [2, 0, 1]

    def test_order_preserved(self):
        ds = filter_classes(self._dataset([3, 0, 3, 0]), {3})
        assert np.allclose(ds.images.ravel() * 4, [0, 2])

    def test_empty_keep_rejected(self):
        with pytest.raises(DimensionError):
            filter_classes(self._dataset([1]), set())

    def test_split_sizes(self):
        train, val = split(self._dataset(np.arange(10) % 3), 0.8, seed=0)
        assert len(train) == 8 and len(val) == 2

    def test_split_deterministic(self):
        ds = self._dataset(np.arange(20) % 4)
        a = split(ds, 0.8, seed=5)
        b = split(ds, 0.8, seed=5)
        assert np.array_equal(a[0].images, b[0].images)

    def test_split_is_partition(self):
        ds = self._dataset(np.arange(17) % 4)
        train, val = split(ds, 0.8, seed=3)
        merged = np.concatenate([train.images.ravel(), val.images.ravel()])
        assert sorted(merged.tolist()) == sorted(ds.images.ravel().tolist())


class TestPrepareBundle:
    def test_digits_bundle_shapes_and_ranges(self, digits_data_dir):
        bundle = prepare_bundle("mnist4", digits_data_dir, seed=0)
        assert bundle.x_train.shape[1] == 16
        assert set(np.unique(bundle.y_train)) <= {0, 1, 2, 3}
        for arr in (bundle.x_train, bundle.x_val, bundle.x_test):
            assert arr.min() >= 0.0 and arr.max() <= 1.0
        # 80/20 split of the filtered training pool
        total = bundle.x_train.shape[0] + bundle.x_val.shape[0]
        assert bundle.x_train.shape[0] == int(0.8 * total)

    def test_subset_and_determinism(self, digits_data_dir):
        a = prepare_bundle("mnist4", digits_data_dir, seed=1, subset=100)
        b = prepare_bundle("mnist4", digits_data_dir, seed=1, subset=100)
        assert a.x_train.shape[0] + a.x_val.shape[0] == 100
        assert np.array_equal(a.x_train, b.x_train)
        assert np.array_equal(a.y_val, b.y_val)

    def test_ten_class_features_are_resized(self, digits_data_dir):
        bundle = prepare_bundle("mnist10", digits_data_dir, seed=0)
        assert bundle.x_train.shape[1] == 100
        assert set(np.unique(bundle.y_train)) <= set(range(10))

    def test_availability_probe(self, digits_data_dir, tmp_path):
        for name in ("mnist4", "fashionmnist10", "cifar10"):
            assert dataset_available(name, digits_data_dir)
            assert not dataset_available(name, tmp_path)
        assert not dataset_available("mnist4", None)


class TestCifarBundle:
    @pytest.fixture
    def cifar_dir(self, tmp_path):
        rng = np.random.default_rng(0)
        root = tmp_path / "cifar-10-batches-bin"
        root.mkdir()
        for name, count in [(f"data_batch_{i}.bin", 40) for i in range(1, 6)] + [("test_batch.bin", 20)]:
            records = bytearray()
            for _ in range(count):
                records.append(int(rng.integers(0, 10)))
                records.extend(rng.integers(0, 256, size=3072, dtype=np.uint8).tobytes())
            (root / name).write_bytes(bytes(records))
        return tmp_path

    def test_prepare_bundle_resizes_to_hundred_features(self, cifar_dir):
        bundle = prepare_bundle("cifar10", cifar_dir, seed=0)
        assert bundle.x_train.shape == (160, 100)  # 80% of 5 x 40 records
        assert bundle.x_val.shape == (40, 100)
        assert bundle.x_test.shape == (20, 100)
        assert bundle.x_train.min() >= 0.0 and bundle.x_train.max() <= 1.0
        assert set(np.unique(bundle.y_train)) <= set(range(10))


class TestOfficialFiles:
    def test_mnist_train_counts(self):
        from conftest import require_dataset
        from qdeq.datasets import _load_pair

        data_dir = require_dataset("mnist4")
        train, test = _load_pair(data_dir, "mnist4")
        assert train.images.shape == (60000, 28, 28)
        filtered = filter_classes(train, {0, 3, 6, 9})
        assert 24000 <= len(filtered) <= 25000

    def test_cifar_batch_counts(self):
        from conftest import require_dataset
        from qdeq.datasets import _find

        data_dir = require_dataset("cifar10")
        ds = load_cifar_binary(_find(data_dir, "cifar10", "data_batch_1.bin"))
        assert len(ds) == 10000
