"""Dataset ingestion: IDX image/label files, one-hot encoding, batching,
and a synthetic teacher-network task for fast desk-scale experiments.

The IDX container is the standard distribution format of the MNIST-family
datasets: a big-endian magic word, big-endian u32 dimension sizes, then a
raw unsigned-byte payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .network import Activation, build_network, forward

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxError(Exception):
    """Base for malformed IDX input."""


class BadMagic(IdxError):
    pass


class TruncatedFile(IdxError):
    pass


class CountMismatch(IdxError):
    pass


@dataclass
class Dataset:
    """Flattened inputs in [0, 1], integer labels in [0, n_classes)."""

    inputs: np.ndarray      # (n_samples, n_features) float64
    labels: np.ndarray      # (n_samples,) int64
    n_classes: int

    def __post_init__(self):
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be 2-D (samples x features)")
        if len(self.inputs) != len(self.labels):
            raise CountMismatch(
                f"{len(self.inputs)} inputs vs {len(self.labels)} labels"
            )
        if len(self.labels) and not (0 <= self.labels.min() and
                                     self.labels.max() < self.n_classes):
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return len(self.labels)


def _read_exact(fh, n: int, what: str) -> bytes:
    blob = fh.read(n)
    if len(blob) != n:
        raise TruncatedFile(f"expected {n} bytes for {what}, got {len(blob)}")
    return blob


def _read_idx_array(path, expected_magic: int, n_dims: int, what: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, = struct.unpack(">I", _read_exact(fh, 4, f"{what} magic"))
        if magic != expected_magic:
            raise BadMagic(f"{what}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
        dims = struct.unpack(f">{n_dims}I", _read_exact(fh, 4 * n_dims, f"{what} dims"))
        count = int(np.prod(dims)) if dims else 0
        payload = _read_exact(fh, count, f"{what} payload")
        if fh.read(1):
            raise IdxError(f"{what}: trailing bytes after payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path, n_classes: int = 10) -> Dataset:
    """Load an IDX image/label file pair; pixels are scaled by 1/255."""
    images = _read_idx_array(images_path, IMAGE_MAGIC, 3, "images")
    labels = _read_idx_array(labels_path, LABEL_MAGIC, 1, "labels")
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images vs {labels.shape[0]} labels")
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(inputs=flat, labels=labels.astype(np.int64), n_classes=n_classes)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (n, rows, cols) and labels (n,) as an IDX pair."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must be (n, rows, cols)")
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images vs {labels.shape[0]} labels")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def one_hot(label: int, classes: int) -> np.ndarray:
    if not 0 <= label < classes:
        raise ValueError(f"label {label} out of range for {classes} classes")
    vec = np.zeros(classes)
    vec[label] = 1.0
    return vec


def one_hot_batch(labels: np.ndarray, classes: int) -> np.ndarray:
    """Column-wise one-hot block, shape (classes, n_labels)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and not (labels.min() >= 0 and labels.max() < classes):
        raise ValueError("labels out of range")
    out = np.zeros((classes, labels.size))
    out[labels, np.arange(labels.size)] = 1.0
    return out


def teacher_network(n_in: int, depth: int, seed: int):
    """The frozen label-generating network used by synthetic_teacher."""
    return build_network([n_in] * depth, n_in, Activation("leaky_relu", 0.01),
                         "orthogonal", seed)


def synthetic_teacher(n_in: int, depth: int, n_classes: int, samples: int,
                      rng: np.random.Generator) -> Dataset:
    """Labels are the argmax over the first n_classes outputs of a frozen
    random orthogonal leaky-ReLU network applied to uniform [0, 1] inputs.

    The teacher weights are derived from the rng's own stream, so a single
    seed pins the whole dataset.
    """
    if n_classes > n_in:
        raise ValueError("n_classes must not exceed n_in")
    teacher_seed = int(rng.integers(0, 2**63 - 1))
    net = teacher_network(n_in, depth, teacher_seed)
    inputs = rng.uniform(0.0, 1.0, size=(samples, n_in))
    if samples == 0:
        return Dataset(inputs=inputs, labels=np.zeros(0, dtype=np.int64),
                       n_classes=n_classes)
    out = forward(net, inputs.T).output()
    labels = np.argmax(out[:n_classes], axis=0).astype(np.int64)
    return Dataset(inputs=inputs, labels=labels, n_classes=n_classes)


def synthetic_teacher_quantized(n_in: int, depth: int, n_classes: int,
                                samples: int, seed: int):
    """Byte-quantized variant for writing IDX files.

    Labels are recomputed from the quantized pixels so that loading the
    files reproduces the dataset exactly. Returns (pixels uint8 (n, n_in),
    labels int64).
    """
    rng = np.random.Generator(np.random.Philox(seed))
    ds = synthetic_teacher(n_in, depth, n_classes, samples, rng)
    pixels = np.clip(np.round(ds.inputs * 255.0), 0, 255).astype(np.uint8)
    # Teacher seed is the first draw from an identically-seeded stream.
    teacher_seed = int(np.random.Generator(np.random.Philox(seed))
                       .integers(0, 2**63 - 1))
    net = teacher_network(n_in, depth, teacher_seed)
    if samples == 0:
        return pixels, np.zeros(0, dtype=np.int64)
    out = forward(net, (pixels.astype(np.float64) / 255.0).T).output()
    labels = np.argmax(out[:n_classes], axis=0).astype(np.int64)
    return pixels, labels


def batches(ds: Dataset, batch_size: int, shuffle: bool,
            rng: np.random.Generator | None = None):
    """Yield (inputs, targets) column blocks covering the dataset once.

    inputs has shape (n_features, b), targets is the one-hot block
    (n_classes, b); the final partial batch is included. Shuffling requires
    an rng and is deterministic under its seed.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(ds))
    if shuffle:
        if rng is None:
            raise ValueError("shuffle=True needs an rng")
        order = rng.permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = order[start:start + batch_size]
        yield ds.inputs[idx].T, one_hot_batch(ds.labels[idx], ds.n_classes)
