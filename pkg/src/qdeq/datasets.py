"""IDX / CIFAR-10 binary ingestion and the preprocessing pipeline.

IDX files are read bit-exactly (big-endian, image magic 0x00000803, label
magic 0x00000801) with transparent gzip handling; CIFAR-10 binary batches are
3073-byte records (label byte + 3x1024 pixel planes) converted to grayscale
luma. Pixels are scaled to [0, 1].
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import DataFormatError, DimensionError
from .seeding import child_seed, substream

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass
class ImageDataset:
    images: np.ndarray  # (N, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    name: str = ""

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataFormatError("images and labels differ in length")

    def __len__(self) -> int:
        return self.images.shape[0]


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _parse_idx_images(raw: bytes, path) -> np.ndarray:
    if len(raw) < 16:
        raise DataFormatError(f"{path}: truncated IDX image header")
    magic, count, height, width = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise DataFormatError(f"{path}: bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")
    expected = 16 + count * height * width
    if len(raw) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    return pixels.reshape(count, height, width).astype(np.float64) / 255.0


def _parse_idx_labels(raw: bytes, path) -> np.ndarray:
    if len(raw) < 8:
        raise DataFormatError(f"{path}: truncated IDX label header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise DataFormatError(f"{path}: bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}")
    if len(raw) != 8 + count:
        raise DataFormatError(f"{path}: expected {8 + count} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def load_idx(images_path, labels_path, name: str = "") -> ImageDataset:
    images = _parse_idx_images(_read_bytes(images_path), images_path)
    labels = _parse_idx_labels(_read_bytes(labels_path), labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} holds {labels.shape[0]} labels"
        )
    return ImageDataset(images, labels, name)


_LUMA = np.array([0.299, 0.587, 0.114])


def load_cifar_binary(path, name: str = "cifar10") -> ImageDataset:
    """One CIFAR-10 binary batch -> grayscale (luma) images in [0, 1]."""
    raw = _read_bytes(path)
    record = 1 + 3 * 1024
    if len(raw) == 0 or len(raw) % record != 0:
        raise DataFormatError(f"{path}: length {len(raw)} is not a multiple of {record}")
    data = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
    labels = data[:, 0].astype(np.int64)
    planes = data[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    gray = np.einsum("c,nchw->nhw", _LUMA, planes)
    return ImageDataset(gray, labels, name)


def avg_pool(image: np.ndarray, out_side: int = 4) -> np.ndarray:
    """Mean over contiguous square windows; side must divide the input side."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[-2:]
    if h % out_side or w % out_side:
        raise DimensionError(f"{h}x{w} image not divisible into {out_side}x{out_side} outputs")
    wh, ww = h // out_side, w // out_side
    view = image.reshape(*image.shape[:-2], out_side, wh, out_side, ww)
    return view.mean(axis=(-3, -1))


@lru_cache(maxsize=None)
def _bilinear_weights(in_side: int, out_side: int) -> np.ndarray:
    """Corner-aligned row interpolation matrix (out_side, in_side)."""
    mat = np.zeros((out_side, in_side))
    if out_side == 1:
        mat[0, 0] = 1.0
        return mat
    for i in range(out_side):
        src = i * (in_side - 1) / (out_side - 1)
        lo = min(int(np.floor(src)), in_side - 2) if in_side > 1 else 0
        frac = src - lo
        mat[i, lo] += 1.0 - frac
        if in_side > 1:
            mat[i, lo + 1] += frac
    return mat


def resize_bilinear(image: np.ndarray, out_side: int = 10) -> np.ndarray:
    """Standard bilinear resize with corner-aligned sampling (exact identity when sizes match)."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[-2:]
    rows = _bilinear_weights(h, out_side)
    cols = _bilinear_weights(w, out_side)
    return np.einsum("oh,...hw,pw->...op", rows, image, cols)


def filter_classes(dataset: ImageDataset, keep) -> ImageDataset:
    """Order-preserving class filter with ascending label remap."""
    keep_sorted = sorted(set(int(k) for k in keep))
    if not keep_sorted:
        raise DimensionError("keep set must be nonempty")
    remap = {orig: new for new, orig in enumerate(keep_sorted)}
    sel = np.isin(dataset.labels, keep_sorted)
    labels = np.array([remap[int(l)] for l in dataset.labels[sel]], dtype=np.int64)
    return ImageDataset(dataset.images[sel], labels, dataset.name)


def split(dataset: ImageDataset, train_frac: float = 0.8, seed: int = 0):
    """Seeded uniform shuffle, then prefix split into (train, val)."""
    if not 0.0 < train_frac < 1.0:
        raise DimensionError("train_frac must lie strictly between 0 and 1")
    order = np.random.default_rng(seed).permutation(len(dataset))
    n_train = int(train_frac * len(dataset))
    head, tail = order[:n_train], order[n_train:]
    return (
        ImageDataset(dataset.images[head], dataset.labels[head], dataset.name),
        ImageDataset(dataset.images[tail], dataset.labels[tail], dataset.name),
    )


# ---------------------------------------------------------------------------
# file discovery + per-dataset preprocessing into flat feature bundles

_MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

_SUBDIRS = {
    "mnist4": ("mnist", "MNIST/raw", "."),
    "mnist10": ("mnist", "MNIST/raw", "."),
    "fashionmnist10": ("fashion-mnist", "fashionmnist", "FashionMNIST/raw", "."),
    "cifar10": ("cifar-10-batches-bin", "cifar10", "."),
}


def _find(data_dir: Path, dataset: str, filename: str):
    for sub in _SUBDIRS[dataset]:
        for suffix in ("", ".gz"):
            candidate = data_dir / sub / (filename + suffix)
            if candidate.is_file():
                return candidate
    return None


def dataset_available(dataset: str, data_dir) -> bool:
    if data_dir is None:
        return False
    data_dir = Path(data_dir)
    if dataset == "cifar10":
        return _find(data_dir, dataset, "data_batch_1.bin") is not None
    return all(_find(data_dir, dataset, f) is not None for f in _MNIST_FILES.values())


def _load_pair(data_dir: Path, dataset: str):
    paths = {}
    for key, filename in _MNIST_FILES.items():
        found = _find(data_dir, dataset, filename)
        if found is None:
            raise DataFormatError(f"{dataset}: {filename} not found under {data_dir}")
        paths[key] = found
    train = load_idx(paths["train_images"], paths["train_labels"], dataset)
    test = load_idx(paths["test_images"], paths["test_labels"], dataset)
    return train, test


def _load_cifar(data_dir: Path):
    batches = []
    for i in range(1, 6):
        found = _find(data_dir, "cifar10", f"data_batch_{i}.bin")
        if found is None:
            raise DataFormatError(f"cifar10: data_batch_{i}.bin not found under {data_dir}")
        batches.append(load_cifar_binary(found))
    test_path = _find(data_dir, "cifar10", "test_batch.bin")
    if test_path is None:
        raise DataFormatError(f"cifar10: test_batch.bin not found under {data_dir}")
    train = ImageDataset(
        np.concatenate([b.images for b in batches]),
        np.concatenate([b.labels for b in batches]),
        "cifar10",
    )
    return train, load_cifar_binary(test_path)


def _features(dataset: str, images: np.ndarray) -> np.ndarray:
    if dataset == "mnist4":
        return avg_pool(images, 4).reshape(images.shape[0], -1)
    return resize_bilinear(images, 10).reshape(images.shape[0], -1)


def prepare_bundle(dataset: str, data_dir, seed: int, subset: int | None = None):
    """Load, filter, (optionally) subsample, split 80/20 and flatten a dataset.

    The split and subset draws come from named substreams of ``seed`` so they
    are shared across architecture sweeps.
    """
    from .training import DataBundle  # local import to avoid a cycle

    data_dir = Path(data_dir)
    if dataset == "cifar10":
        train_full, test = _load_cifar(data_dir)
    else:
        train_full, test = _load_pair(data_dir, dataset)
    if dataset == "mnist4":
        train_full = filter_classes(train_full, {0, 3, 6, 9})
        test = filter_classes(test, {0, 3, 6, 9})
    if subset is not None and subset < len(train_full):
        pick = substream(seed, "subset").choice(len(train_full), size=subset, replace=False)
        pick.sort()
        train_full = ImageDataset(train_full.images[pick], train_full.labels[pick], dataset)
    train, val = split(train_full, 0.8, child_seed(seed, "data-split"))
    return DataBundle(
        name=dataset,
        x_train=_features(dataset, train.images),
        y_train=train.labels,
        x_val=_features(dataset, val.images),
        y_val=val.labels,
        x_test=_features(dataset, test.images),
        y_test=test.labels,
    )
