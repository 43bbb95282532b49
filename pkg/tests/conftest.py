"""Shared fixtures: dataset gating, dense-matrix oracles, synthetic data."""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np
import pytest

from qdeq.datasets import dataset_available
from qdeq.training import DataBundle


def data_dir():
    value = os.environ.get("QDEQ_DATA_DIR")
    return Path(value) if value else None


def require_dataset(name: str):
    if not dataset_available(name, data_dir()):
        pytest.skip(f"{name} files not found; point QDEQ_DATA_DIR at the official data")
    return data_dir()


def require_slow():
    if os.environ.get("QDEQ_RUN_SLOW") != "1":
        pytest.skip("full-budget run; set QDEQ_RUN_SLOW=1 to enable")


# ---------------------------------------------------------------------------
# dense-matrix oracle: builds full 2^Q x 2^Q unitaries the slow, obvious way

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_P0 = np.array([[1, 0], [0, 0]], dtype=complex)
_P1 = np.array([[0, 0], [0, 1]], dtype=complex)


def _rot_matrix(kind: str, angle: float) -> np.ndarray:
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    if kind == "rx":
        return np.array([[c, -1j * s], [-1j * s, c]])
    if kind == "ry":
        return np.array([[c, -s], [s, c]])
    return np.array([[c - 1j * s, 0], [0, c + 1j * s]])


def _kron_chain(factors):
    # qubit 0 is the least significant bit, so it sits rightmost in the chain:
    # full = kron(f_{Q-1}, ..., f_1, f_0)
    out = factors[-1]
    for f in reversed(factors[:-1]):
        out = np.kron(out, f)
    return out


def dense_gate(gate, theta, num_qubits: int) -> np.ndarray:
    if gate.kind == "cnot":
        on = [_I2] * num_qubits
        off = [_I2] * num_qubits
        off[gate.control] = _P0
        on[gate.control] = _P1
        on[gate.target] = _X
        return _kron_chain(off) + _kron_chain(on)
    factors = [_I2] * num_qubits
    if gate.kind == "x":
        factors[gate.target] = _X
    elif gate.kind == "h":
        factors[gate.target] = _H
    else:
        angle = theta[gate.param_slot] if gate.param_slot is not None else gate.fixed_angle
        factors[gate.target] = _rot_matrix(gate.kind, angle)
    return _kron_chain(factors)


def dense_circuit(circuit, theta) -> np.ndarray:
    u = np.eye(1 << circuit.num_qubits, dtype=complex)
    for gate in circuit.gates:
        u = dense_gate(gate, theta, circuit.num_qubits) @ u
    return u


@pytest.fixture
def dense_oracle():
    return dense_circuit


# ---------------------------------------------------------------------------
# synthetic bundles and IDX fixtures (sklearn digits rendered as MNIST-style files)


def synthetic_bundle(seed=0, n_train=400, n_val=100, n_test=100, n=16, classes=4, noise=0.12):
    """Separable Gaussian-blob classification sharing prototypes across splits."""
    rng = np.random.default_rng(seed)
    protos = rng.uniform(0.2, 1.0, size=(classes, n))

    def draw(count):
        y = rng.integers(0, classes, size=count)
        x = np.clip(protos[y] + rng.normal(0, noise, size=(count, n)), 0.0, 1.0)
        return x, y

    xt, yt = draw(n_train)
    xv, yv = draw(n_val)
    xe, ye = draw(n_test)
    return DataBundle("mnist4", xt, yt, xv, yv, xe, ye)


@pytest.fixture
def small_bundle():
    return synthetic_bundle()


def _idx_image_bytes(images_u8: np.ndarray) -> bytes:
    n, h, w = images_u8.shape
    return struct.pack(">IIII", 0x00000803, n, h, w) + images_u8.tobytes()


def _idx_label_bytes(labels_u8: np.ndarray) -> bytes:
    return struct.pack(">II", 0x00000801, labels_u8.shape[0]) + labels_u8.tobytes()


def write_idx_pair(directory: Path, prefix: str, images_u8, labels_u8):
    (directory / f"{prefix}-images-idx3-ubyte").write_bytes(_idx_image_bytes(images_u8))
    (directory / f"{prefix}-labels-idx1-ubyte").write_bytes(_idx_label_bytes(labels_u8))


@pytest.fixture(scope="session")
def digits_data_dir(tmp_path_factory) -> Path:
    """A stand-in data root covering all four dataset layouts.

    sklearn's 8x8 digits are written as 28x28 MNIST-style IDX files (served
    both as mnist and fashion-mnist), and small random CIFAR-10 binary
    batches complete the directory.
    """
    sklearn_datasets = pytest.importorskip("sklearn.datasets")
    bunch = sklearn_datasets.load_digits()
    images = np.repeat(np.repeat(bunch.images / 16.0, 4, axis=1), 4, axis=2)[:, 2:30, 2:30]
    images_u8 = np.clip(images * 255.0, 0, 255).astype(np.uint8)
    labels_u8 = bunch.target.astype(np.uint8)
    base = tmp_path_factory.mktemp("digits-idx")
    split = 1300
    for sub in ("mnist", "fashion-mnist"):
        root = base / sub
        root.mkdir()
        write_idx_pair(root, "train", images_u8[:split], labels_u8[:split])
        write_idx_pair(root, "t10k", images_u8[split:], labels_u8[split:])
    rng = np.random.default_rng(0)
    cifar = base / "cifar-10-batches-bin"
    cifar.mkdir()
    for name, count in [(f"data_batch_{i}.bin", 64) for i in range(1, 6)] + [("test_batch.bin", 32)]:
        records = bytearray()
        for _ in range(count):
            records.append(int(rng.integers(0, 10)))
            records.extend(rng.integers(0, 256, size=3072, dtype=np.uint8).tobytes())
        (cifar / name).write_bytes(bytes(records))
    return base
