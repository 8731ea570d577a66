"""Datasets: IDX ingestion, synthetic blobs, splitting and batching."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


class IDXFormatError(ValueError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = str(path)
        self.offset = offset


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    name: str = ""

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError(f"inputs {x.shape} and labels {y.shape} do not line up")
        if x.size and (x.min() < 0.0 or x.max() > 1.0):
            raise ValueError("inputs must lie in [0, 1]")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], self.n_classes,
                       self.name if name is None else name)


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray
    indices: np.ndarray

    def __len__(self):
        return len(self.labels)


def _read_header(path, raw: bytes, magic: int, ndim: int):
    need = 4 * (1 + ndim)
    if len(raw) < need:
        raise IDXFormatError(path, len(raw), f"truncated header, need {need} bytes")
    found = struct.unpack(">i", raw[:4])[0]
    if found != magic:
        raise IDXFormatError(path, 0, f"bad magic {found}, expected {magic}")
    dims = struct.unpack(f">{ndim}i", raw[4:need])
    for i, d in enumerate(dims):
        if d < 0:
            raise IDXFormatError(path, 4 + 4 * i, f"negative dimension {d}")
    body = raw[need:]
    expected = int(np.prod(dims, dtype=np.int64))
    if len(body) != expected:
        where = need + min(len(body), expected)
        kind = "truncated" if len(body) < expected else "trailing bytes in"
        raise IDXFormatError(path, where, f"{kind} payload: {len(body)} bytes for {expected} values")
    return dims, np.frombuffer(body, dtype=np.uint8)


def read_idx_images(path) -> np.ndarray:
    """Images as a (count, rows*cols) float array scaled into [0, 1]."""
    raw = Path(path).read_bytes()
    (count, rows, cols), pixels = _read_header(path, raw, IMAGE_MAGIC, 3)
    return pixels.reshape(count, rows * cols).astype(np.float64) / 255.0


def read_idx_labels(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (count,), labels = _read_header(path, raw, LABEL_MAGIC, 1)
    return labels.astype(np.int64)


def load_idx(images_path, labels_path, n_classes: int = 10, name: str = "") -> Dataset:
    x = read_idx_images(images_path)
    y = read_idx_labels(labels_path)
    if len(x) != len(y):
        raise IDXFormatError(labels_path, 4, f"label count {len(y)} != image count {len(x)}")
    if len(y) and y.max() >= n_classes:
        raise IDXFormatError(labels_path, 8 + int(np.argmax(y >= n_classes)),
                             f"label {y.max()} out of range for {n_classes} classes")
    return Dataset(x, y, n_classes, name or Path(images_path).stem)


def write_idx_images(path, images: np.ndarray) -> None:
    """Write uint8 images of shape (count, rows, cols)."""
    images = np.asarray(images, dtype=np.uint8)
    header = struct.pack(">4i", IMAGE_MAGIC, *images.shape)
    Path(path).write_bytes(header + images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">2i", LABEL_MAGIC, len(labels)) + labels.tobytes())


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint random split."""
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(dataset))
    cut = int(round(train_fraction * len(dataset)))
    return (dataset.subset(np.sort(order[:cut]), f"{dataset.name}-train"),
            dataset.subset(np.sort(order[cut:]), f"{dataset.name}-test"))


def synth_blobs(n_classes: int, n_features: int, n_per_class: int, separation: float,
                noise_std: float, seed: int) -> tuple[Dataset, Dataset]:
    """Gaussian blobs centred at ``separation * e_c``, clamped to [0, 1], split 80/20."""
    if n_classes < 2 or n_features < 2:
        raise ValueError("need at least 2 classes and 2 features")
    if n_classes > n_features:
        raise ValueError("axis-aligned centres need n_features >= n_classes")
    rng = np.random.Generator(np.random.PCG64(seed))
    labels = np.repeat(np.arange(n_classes), n_per_class)
    centres = separation * np.eye(n_classes, n_features)
    x = centres[labels] + noise_std * rng.standard_normal((len(labels), n_features))
    full = Dataset(np.clip(x, 0.0, 1.0), labels, n_classes, "blobs")
    return split(full, 0.8, seed + 1)


def shuffled_batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """One epoch of disjoint index batches covering ``range(n)``.

    Indices inside a batch are sorted; order within a batch carries no meaning
    and sorting keeps reductions identical to a Poisson batch with q = 1.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield np.sort(order[start:start + batch_size])


def batches(dataset: Dataset, *, mode: str, seed: int, batch_size: int | None = None,
            sample_rate: float | None = None, n_batches: int | None = None) -> Iterator[Batch]:
    """Iterate batches in ``shuffled_epoch`` or ``poisson`` mode.

    Poisson mode draws ``n_batches`` batches (default ``round(1/q)``, one epoch)
    and may yield empty batches.
    """
    from .dp_optim import NoiseSource, poisson_subsample

    if mode == "shuffled_epoch":
        if batch_size is None:
            raise ValueError("shuffled_epoch mode needs batch_size")
        rng = np.random.Generator(np.random.PCG64(seed))
        index_iter = shuffled_batches(len(dataset), batch_size, rng)
    elif mode == "poisson":
        if sample_rate is None:
            raise ValueError("poisson mode needs sample_rate")
        noise = NoiseSource(seed)
        count = n_batches if n_batches is not None else max(1, round(1 / sample_rate))
        index_iter = (poisson_subsample(len(dataset), sample_rate, noise) for _ in range(count))
    else:
        raise ValueError(f"unknown batching mode {mode!r}")
    for idx in index_iter:
        yield Batch(dataset.inputs[idx], dataset.labels[idx], idx)
