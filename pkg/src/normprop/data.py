"""Datasets, loaders and the two input-normalization strategies.

Global normalization standardizes every feature with whole-dataset statistics
(population divisor). Batch normalization of the data standardizes each
training mini-batch by its own statistics and keeps an exponential moving
average for evaluation.
"""

import csv
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DataError, FormatError, InsufficientDataError

EPS_STD = 1e-8
DEFAULT_DECAY = 0.99

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


@dataclass
class Dataset:
    """Samples as rows of ``X``; ``image_shape`` is (channels, height, width) for image data."""

    X: np.ndarray
    y: Optional[np.ndarray] = None
    image_shape: Optional[tuple] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise DataError(f"dataset features must be 2-d (samples, features), got {self.X.shape}")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape != (self.X.shape[0],):
                raise DataError(f"{self.X.shape[0]} samples but labels have shape {self.y.shape}")
        if self.image_shape is not None:
            self.image_shape = tuple(int(v) for v in self.image_shape)
            if int(np.prod(self.image_shape)) != self.X.shape[1]:
                raise DataError(f"image shape {self.image_shape} does not match {self.X.shape[1]} features")

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_classes(self):
        return int(self.y.max()) + 1 if self.y is not None and self.y.size else 0

    def subset(self, idx):
        return Dataset(self.X[idx], None if self.y is None else self.y[idx], self.image_shape)

    def split(self, eval_fraction, seed=0):
        """Seeded shuffle, then hold out ``eval_fraction`` of the samples."""
        order = np.random.default_rng(seed).permutation(len(self))
        n_eval = int(round(eval_fraction * len(self)))
        return self.subset(np.sort(order[n_eval:])), self.subset(np.sort(order[:n_eval]))


@dataclass
class DatasetStats:
    mean: np.ndarray
    std: np.ndarray
    count: int
    floored: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.floored is None:
            self.floored = np.zeros(self.mean.shape, dtype=bool)


class RunningStats:
    """Exponential moving average of per-feature mean and variance.

    The first update copies the batch statistics; later ones blend with
    weight ``decay`` on the old estimate.
    """

    def __init__(self, features, decay=DEFAULT_DECAY):
        if not 0.0 < decay < 1.0:
            raise DataError(f"running-stat decay must lie in (0, 1), got {decay}")
        self.decay = float(decay)
        self.mean = np.zeros(features)
        self.var = np.ones(features)
        self.steps = 0

    @property
    def std(self):
        return np.sqrt(self.var)

    def update(self, batch_mean, batch_var):
        batch_mean = np.asarray(batch_mean, dtype=np.float64)
        batch_var = np.asarray(batch_var, dtype=np.float64)
        if self.steps == 0:
            self.mean = batch_mean.copy()
            self.var = batch_var.copy()
        else:
            d = self.decay
            self.mean = d * self.mean + (1.0 - d) * batch_mean
            self.var = d * self.var + (1.0 - d) * batch_var
        self.steps += 1
        return self

    def as_dataset_stats(self):
        std = np.sqrt(self.var)
        floored = std < EPS_STD
        return DatasetStats(self.mean.copy(), np.where(floored, EPS_STD, std), self.steps, floored)

    def state(self):
        return {"mean": self.mean, "var": self.var, "decay": np.float64(self.decay), "steps": np.int64(self.steps)}

    def load_state(self, state):
        self.mean = np.array(state["mean"], dtype=np.float64)
        self.var = np.array(state["var"], dtype=np.float64)
        self.decay = float(state["decay"])
        self.steps = int(state["steps"])


def _features(data):
    X = data.X if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    return X.reshape(X.shape[0], int(np.prod(X.shape[1:])))


def fit_global_stats(data):
    X = _features(data)
    if X.shape[0] == 0:
        raise DataError("cannot fit normalization statistics on an empty dataset")
    if X.shape[0] < 2:
        raise InsufficientDataError("global normalization needs at least 2 samples")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    floored = std < EPS_STD
    return DatasetStats(mean, np.where(floored, EPS_STD, std), X.shape[0], floored)


def apply_normalization(x, stats):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stats.mean.shape[0]:
        raise DataError(f"feature dimension {x.shape[-1]} does not match statistics ({stats.mean.shape[0]})")
    return (x - stats.mean) / stats.std


def batch_normalize_data(batch, running):
    """Standardize ``batch`` by its own statistics and fold them into ``running``."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[0] < 2:
        raise InsufficientDataError(
            "batch data normalization needs at least 2 samples per batch; use global data normalization "
            "for batch size 1"
        )
    mean = batch.mean(axis=0)
    var = batch.var(axis=0)
    running.update(mean, var)
    return (batch - mean) / np.maximum(np.sqrt(var), EPS_STD), running


def read_idx(path):
    """Read an IDX (MNIST-style, big-endian) file into an array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated IDX header at byte offset {len(raw)}")
    if raw[0] != 0 or raw[1] != 0:
        raise FormatError(f"{path}: bad IDX magic {raw[:4].hex()} at byte offset 0")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_TYPES:
        raise FormatError(f"{path}: unknown IDX element type 0x{code:02x} at byte offset 2")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated IDX dimension list at byte offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    dtype = _IDX_TYPES[code]
    expected = header_end + int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) < expected:
        raise FormatError(f"{path}: truncated IDX payload at byte offset {len(raw)}, expected {expected} bytes")
    if len(raw) > expected:
        raise FormatError(f"{path}: {len(raw) - expected} trailing bytes after byte offset {expected}")
    return np.frombuffer(raw, dtype=dtype, offset=header_end).reshape(dims)


def load_idx(images_path, labels_path=None):
    images = read_idx(images_path)
    if images.ndim not in (2, 3):
        raise FormatError(f"{images_path}: expected IDX magic 0x0803 (or 0x0802), got {images.ndim} dimensions")
    n = images.shape[0]
    image_shape = (1,) + images.shape[1:] if images.ndim == 3 else None
    labels = None
    if labels_path is not None:
        labels = read_idx(labels_path)
        if labels.ndim != 1:
            raise FormatError(f"{labels_path}: expected IDX magic 0x0801, got {labels.ndim} dimensions")
        if labels.shape[0] != n:
            raise DataError(f"{n} images but {labels.shape[0]} labels")
    return Dataset(images.reshape(n, -1).astype(np.float64), labels, image_shape)


def load_cifar(path):
    """CIFAR-10 binary batch: 3073-byte records, one label byte then 3072 pixel bytes."""
    with open(path, "rb") as fh:
        raw = fh.read()
    rec = 3073
    if not raw or len(raw) % rec:
        raise FormatError(f"{path}: truncated CIFAR record at byte offset {len(raw) - len(raw) % rec}")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, rec)
    return Dataset(arr[:, 1:].astype(np.float64), arr[:, 0].astype(np.int64), (3, 32, 32))


def load_csv(path, label_column):
    """CSV with a header row; every column but ``label_column`` is a numeric feature.

    Integer labels are kept; other label values are mapped to their sorted rank.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty CSV, no header at byte offset 0") from None
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header {header}")
        li = header.index(label_column)
        features, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}: line {line_no} has {len(row)} fields, expected {len(header)}")
            try:
                features.append([float(v) for i, v in enumerate(row) if i != li])
            except ValueError as exc:
                raise FormatError(f"{path}: line {line_no}: {exc}") from None
            labels.append(row[li].strip())
    if not features:
        raise DataError(f"{path}: no data rows")
    try:
        y = np.array([int(v) for v in labels])
    except ValueError:
        classes = sorted(set(labels))
        y = np.array([classes.index(v) for v in labels])
    return Dataset(np.array(features), y)


def synth_gaussian(n, dim, seed, task="two-class", classes=3, margin=1.0, separation=3.0):
    """Seeded synthetic classification data.

    ``two-class``: ``x ~ N(0, I)`` is labelled by the side of a random
    hyperplane through the origin with unit normal ``w``, then pushed
    ``margin`` further away along ``w``. The set is linearly separable and the
    class-conditional means are ``+-(margin + sqrt(2/pi)) w``.

    ``mixture``: ``classes`` Gaussian clusters ``N(separation * e_k, I)`` where
    ``e_k`` are random unit vectors; labels are drawn uniformly.
    """
    if n < 1 or dim < 1:
        raise DataError(f"synthetic dataset needs n >= 1 and dim >= 1, got n={n}, dim={dim}")
    rng = np.random.default_rng(seed)
    if task == "two-class":
        w = rng.standard_normal(dim)
        w /= np.linalg.norm(w)
        X = rng.standard_normal((n, dim))
        y = (X @ w > 0).astype(np.int64)
        X += np.outer((2 * y - 1) * margin, w)
    elif task == "mixture":
        centres = rng.standard_normal((classes, dim))
        centres *= separation / np.linalg.norm(centres, axis=1, keepdims=True)
        y = rng.integers(0, classes, size=n)
        X = centres[y] + rng.standard_normal((n, dim))
    else:
        raise DataError(f"unknown synthetic task {task!r}; expected 'two-class' or 'mixture'")
    return Dataset(X, y)
