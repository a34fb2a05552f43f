"""Datasets: seeded Gaussian blobs and IDX (MNIST-style) files."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import InvalidArgument

# IDX type byte -> big-endian numpy dtype
IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


@dataclass
class FeatureBatch:
    data: np.ndarray  # (count, dim)
    labels: np.ndarray  # (count,)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise InvalidArgument("a batch needs at least one sample")
        if self.labels.shape != (self.data.shape[0],):
            raise InvalidArgument("one label per sample is required")

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    num_classes: int

    @property
    def input_dim(self) -> int:
        return self.x_train.shape[1]


def make_blobs(num_classes: int = 4, n_train: int = 2000, n_test: int = 500, dim: int = 64,
               separation: float = 8.0, seed: int = 0) -> Dataset:
    """Balanced Gaussian clusters with unit within-class variance.

    Class centres are drawn from N(0, separation**2 / dim) per coordinate, so
    the expected distance between two centres is about ``separation * sqrt(2)``.
    """
    if num_classes < 2 or n_train < 1 or n_test < 1 or dim < 1:
        raise InvalidArgument("blob dataset needs >=2 classes and positive sizes")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, separation / np.sqrt(dim), size=(num_classes, dim))
    n = n_train + n_test
    labels = rng.permutation(np.arange(n) % num_classes)
    x = centers[labels] + rng.normal(size=(n, dim))
    return Dataset(x[:n_train], labels[:n_train], x[n_train:], labels[n_train:], num_classes)


def read_idx(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    if len(raw) < 4:
        raise InvalidArgument(f"{path}: not an IDX file")
    zero, type_code, ndim = struct.unpack_from(">HBB", raw)
    if zero != 0 or type_code not in IDX_DTYPES:
        raise InvalidArgument(f"{path}: bad IDX magic {raw[:4].hex()}")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    dtype = IDX_DTYPES[type_code]
    offset = 4 + 4 * ndim
    count = int(np.prod(dims)) if dims else 1
    if len(raw) != offset + count * dtype.itemsize:
        raise InvalidArgument(f"{path}: IDX payload size does not match header {dims}")
    return np.frombuffer(raw, dtype=dtype, offset=offset).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    for code, dt in IDX_DTYPES.items():
        if dt.newbyteorder("=") == array.dtype.newbyteorder("="):
            break
    else:
        raise InvalidArgument(f"dtype {array.dtype} has no IDX encoding")
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    body = array.astype(IDX_DTYPES[code]).tobytes()
    data = header + body
    path = Path(path)
    path.write_bytes(gzip.compress(data) if path.suffix == ".gz" else data)


def _find(directory: Path, stem: str) -> Path:
    for candidate in (directory / stem, directory / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"missing {stem}[.gz] in {directory}")


def load_idx_dataset(directory, num_classes: int | None = None) -> Dataset:
    """Load MNIST-named IDX files from ``directory``; images are scaled to [0, 1]."""
    directory = Path(directory)
    arrays = [read_idx(_find(directory, s)) for s in (
        "train-images-idx3-ubyte", "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")]
    xs = []
    for images in (arrays[0], arrays[2]):
        x = images.reshape(images.shape[0], -1).astype(np.float64)
        if images.dtype.kind == "u" and images.dtype.itemsize == 1:
            x /= 255.0
        xs.append(x)
    y_train, y_test = (a.astype(np.int64).reshape(-1) for a in (arrays[1], arrays[3]))
    if len(y_train) != len(xs[0]) or len(y_test) != len(xs[1]):
        raise InvalidArgument("image and label counts differ")
    if num_classes is None:
        num_classes = int(max(y_train.max(), y_test.max())) + 1
    return Dataset(xs[0], y_train, xs[1], y_test, num_classes)


def iterate_batches(x: np.ndarray, y: np.ndarray, batch_size: int,
                    rng: np.random.Generator | None = None) -> Iterator[FeatureBatch]:
    """Consecutive batches (shuffled when ``rng`` is given); the last may be short."""
    if batch_size < 1:
        raise InvalidArgument("batch size must be positive")
    order = rng.permutation(len(x)) if rng is not None else np.arange(len(x))
    for start in range(0, len(x), batch_size):
        idx = order[start:start + batch_size]
        yield FeatureBatch(x[idx], y[idx])
