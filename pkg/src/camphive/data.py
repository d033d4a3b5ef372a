"""Dataset loading: seeded synthetic generators, IDX image files, and CSV.

All loaders normalize features to [0, 1] (per-feature min-max for vector
data, a single global min-max for image data) and produce a deterministic
train/test split keyed to the dataset seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.datasets import make_blobs, make_moons

from .errors import ConfigError, DataFormatError
from .network import Batch

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Feature array with integer labels; the in-memory 'stream' of batches."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self):
        return len(self.labels)

    def batch(self):
        return Batch(self.features, self.labels, self.num_classes)

    def subset(self, idx):
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def take(self, n, seed):
        """Fixed seeded subset of at most n samples (whole set if smaller)."""
        if n >= len(self):
            return self
        idx = np.random.default_rng(seed).permutation(len(self))[:n]
        return self.subset(np.sort(idx))

    def minibatches(self, batch_size, rng):
        perm = rng.permutation(len(self))
        for start in range(0, len(self), batch_size):
            idx = perm[start:start + batch_size]
            yield Batch(self.features[idx], self.labels[idx], self.num_classes)

    def with_features(self, features):
        return Dataset(features, self.labels, self.num_classes)


def _minmax_per_feature(x):
    lo = x.min(axis=0, keepdims=True)
    hi = x.max(axis=0, keepdims=True)
    span = hi - lo
    span[span == 0] = 1.0
    return (x - lo) / span


def _minmax_global(x):
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return np.zeros_like(x, dtype=np.float64)
    return (x - lo) / (hi - lo)


def _split(features, labels, num_classes, seed, train_fraction=0.8):
    n = len(labels)
    perm = np.random.default_rng(seed).permutation(n)
    cut = int(round(n * train_fraction))
    if cut < 1 or cut >= n:
        raise ConfigError(f"train fraction {train_fraction} leaves an empty split for n={n}")
    tr, te = perm[:cut], perm[cut:]
    return (Dataset(features[tr], labels[tr], num_classes),
            Dataset(features[te], labels[te], num_classes))


def _read_be32(f, what):
    raw = f.read(4)
    if len(raw) != 4:
        raise DataFormatError(f"truncated IDX file while reading {what}")
    return struct.unpack(">I", raw)[0]


def load_idx_images(path):
    # Big-endian: u32 magic 0x00000803, u32 count, u32 rows, u32 cols, u8 pixels.
    with open(path, "rb") as f:
        magic = _read_be32(f, "image magic")
        if magic != IDX_IMAGE_MAGIC:
            raise DataFormatError(
                f"bad IDX magic 0x{magic:08x} in {path}; expected 0x{IDX_IMAGE_MAGIC:08x} "
                f"for images (0x{IDX_LABEL_MAGIC:08x} for labels)")
        count = _read_be32(f, "image count")
        rows = _read_be32(f, "row count")
        cols = _read_be32(f, "col count")
        data = np.frombuffer(f.read(), dtype=np.uint8)
    if data.size != count * rows * cols:
        raise DataFormatError(f"{path} holds {data.size} pixels, header promises {count * rows * cols}")
    return data.reshape(count, rows, cols).astype(np.float64)


def load_idx_labels(path):
    # Big-endian: u32 magic 0x00000801, u32 count, u8 labels.
    with open(path, "rb") as f:
        magic = _read_be32(f, "label magic")
        if magic != IDX_LABEL_MAGIC:
            raise DataFormatError(
                f"bad IDX magic 0x{magic:08x} in {path}; expected 0x{IDX_LABEL_MAGIC:08x} "
                f"for labels (0x{IDX_IMAGE_MAGIC:08x} for images)")
        count = _read_be32(f, "label count")
        data = np.frombuffer(f.read(), dtype=np.uint8)
    if data.size != count:
        raise DataFormatError(f"{path} holds {data.size} labels, header promises {count}")
    return data.astype(np.int64)


def _load_idx_pair(images_path, labels_path):
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if len(images) != len(labels):
        raise DataFormatError(
            f"IDX dim mismatch: {len(images)} images vs {len(labels)} labels")
    return images, labels


def load_csv(path):
    """Numeric CSV, last column an integer class label."""
    try:
        table = np.genfromtxt(path, delimiter=",", dtype=np.float64)
    except (OSError, IOError):
        raise
    if table.ndim == 1:
        table = table.reshape(1, -1)
    if table.shape[1] < 2:
        raise DataFormatError(f"{path} needs at least one feature column plus a label column")
    if not np.isfinite(table).all():
        raise DataFormatError(f"{path} contains missing or non-numeric cells")
    labels = table[:, -1]
    if not np.all(labels == np.round(labels)):
        raise DataFormatError(f"last column of {path} must hold integer labels")
    return table[:, :-1], labels.astype(np.int64)


def load_dataset(spec):
    """Build (train, test) Datasets from a dataset spec dict.

    Keys: kind (synthetic-blobs | synthetic-moons | idx | csv), seed
    (required), and per-kind fields; see the README for the schema.
    """
    kind = spec.get("kind")
    seed = spec.get("seed")
    if seed is None:
        raise ConfigError("dataset spec needs an explicit 'seed'; refusing silent randomness")
    train_fraction = spec.get("train_fraction", 0.8)

    if kind == "synthetic-blobs":
        classes = int(spec.get("classes", 3))
        n = int(spec.get("samples", 600))
        features = int(spec.get("features", 2))
        std = float(spec.get("cluster_std", 1.0))
        x, y = make_blobs(n_samples=n, centers=classes, n_features=features,
                          cluster_std=std, random_state=seed)
        x = _minmax_per_feature(x.astype(np.float64))
        return _split(x, y.astype(np.int64), classes, seed, train_fraction)

    if kind == "synthetic-moons":
        n = int(spec.get("samples", 600))
        noise = float(spec.get("noise", 0.1))
        x, y = make_moons(n_samples=n, noise=noise, random_state=seed)
        x = _minmax_per_feature(x.astype(np.float64))
        return _split(x, y.astype(np.int64), 2, seed, train_fraction)

    if kind == "idx":
        paths = spec.get("paths", {})
        for key in ("images", "labels"):
            if key not in paths:
                raise ConfigError(f"idx dataset spec needs paths.{key}")
        images, labels = _load_idx_pair(paths["images"], paths["labels"])
        classes = int(spec.get("classes", int(labels.max()) + 1))
        if labels.max() >= classes:
            raise DataFormatError(f"label {labels.max()} out of range for {classes} classes")
        images = _minmax_global(images)
        if "test_images" in paths or "test_labels" in paths:
            for key in ("test_images", "test_labels"):
                if key not in paths:
                    raise ConfigError(f"idx dataset spec needs paths.{key} when a test pair is given")
            test_images, test_labels = _load_idx_pair(paths["test_images"], paths["test_labels"])
            test_images = _minmax_global(test_images)
            return (Dataset(images, labels, classes),
                    Dataset(test_images, test_labels, classes))
        return _split(images, labels, classes, seed, train_fraction)

    if kind == "csv":
        paths = spec.get("paths", {})
        if "file" not in paths:
            raise ConfigError("csv dataset spec needs paths.file")
        x, y = load_csv(paths["file"])
        if y.min() < 0:
            raise DataFormatError("csv labels must be non-negative")
        classes = int(spec.get("classes", int(y.max()) + 1))
        if y.max() >= classes:
            raise DataFormatError(f"label {y.max()} out of range for {classes} classes")
        x = _minmax_per_feature(x)
        return _split(x, y, classes, seed, train_fraction)

    raise ConfigError(f"unknown dataset kind {kind!r}")
