"""Dataset ingestion (CSV and MNIST-style IDX), class-balanced subsampling and toy blobs."""

from __future__ import annotations

import csv
import gzip
import struct
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import DataError, InsufficientClassSamplesError, InvalidArgumentError
from .trainer import LabeledDataset

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def load_csv(path, num_classes: Optional[int] = None) -> LabeledDataset:
    """Header row, then ``label, f0, f1, ...`` per line."""
    labels, rows = [], []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path}:1: header needs a label column and at least one feature")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} fields, found {len(row)}")
            try:
                label = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise DataError(f"{path}:{lineno}: label {label} out of range")
            if not all(np.isfinite(values)):
                raise DataError(f"{path}:{lineno}: non-finite feature value")
            labels.append(label)
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return LabeledDataset(np.array(rows), np.array(labels, dtype=np.int64), num_classes)


def _read_idx(path, magic: int):
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 8:
        raise DataError(f"{path}: offset 0: truncated header")
    found, = struct.unpack_from(">I", data, 0)
    if found != magic:
        raise DataError(f"{path}: offset 0: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise DataError(f"{path}: offset 4: truncated dimension header")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    count = int(np.prod(dims))
    if len(data) - header != count:
        raise DataError(f"{path}: offset {header}: expected {count} data bytes, found {len(data) - header}")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def default_labels_path(images_path) -> Path:
    p = Path(images_path)
    name = p.name.replace("images-idx3", "labels-idx1").replace("images.idx3", "labels.idx1")
    if name == p.name:
        raise DataError(f"{images_path}: cannot infer the labels file; pass labels_path")
    return p.with_name(name)


def load_idx(images_path, labels_path=None, num_classes: Optional[int] = None) -> LabeledDataset:
    """Big-endian MNIST image/label pair; pixels rescaled to [0, 1] and flattened."""
    labels_path = labels_path or default_labels_path(images_path)
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images_path}: {images.shape[0]} images but {labels.shape[0]} labels")
    if num_classes is not None and np.any(labels >= num_classes):
        bad = int(np.flatnonzero(labels >= num_classes)[0])
        raise DataError(f"{labels_path}: offset {8 + bad}: label {labels[bad]} out of range")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return LabeledDataset(x, labels, num_classes)


def load_dataset(path, format: str = "csv", num_classes: Optional[int] = None,
                 labels_path=None) -> LabeledDataset:
    if format == "csv":
        return load_csv(path, num_classes)
    if format == "idx":
        return load_idx(path, labels_path, num_classes)
    raise DataError(f"unknown dataset format {format!r}")


def write_csv(dataset: LabeledDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{j}" for j in range(dataset.dim)])
        for y, row in zip(dataset.labels, dataset.inputs):
            w.writerow([int(y)] + [repr(float(v)) for v in row])


def write_idx(images: np.ndarray, labels: Sequence[int], images_path, labels_path) -> None:
    """Write a uint8 image stack of shape ``(n, rows, cols)`` and its labels as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_IMAGES_MAGIC))
        fh.write(struct.pack(">3I", *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def balanced_subsample(dataset: LabeledDataset, n: int, seed: int = 0) -> LabeledDataset:
    """``n // C`` rows per present class, the remainder going one each to the lowest class ids."""
    classes = np.unique(dataset.labels)
    c = classes.size
    if n < c:
        raise InvalidArgumentError(f"n={n} is smaller than the {c} classes present")
    per_class = np.full(c, n // c)
    per_class[: n % c] += 1
    rng = np.random.default_rng(seed)
    chosen = []
    for cls, want in zip(classes, per_class):
        rows = np.flatnonzero(dataset.labels == cls)
        if rows.size < want:
            raise InsufficientClassSamplesError(int(cls), rows.size, int(want))
        chosen.append(rng.choice(rows, size=int(want), replace=False))
    return dataset.subset(np.sort(np.concatenate(chosen)))


def make_blobs(n: int, centers, std: float = 1.0, seed: int = 0, num_classes=None) -> LabeledDataset:
    """Isotropic Gaussian blobs; labels cycle through the centers so classes stay balanced."""
    centers = np.asarray(centers, dtype=np.float64)
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % centers.shape[0]
    x = centers[labels] + std * rng.standard_normal((n, centers.shape[1]))
    return LabeledDataset(x, labels, num_classes or centers.shape[0])


def square_centers(num_classes: int = 4, radius: float = 3.0) -> np.ndarray:
    """Class centers evenly spaced on a circle (a square for four classes)."""
    angles = 2 * np.pi * (np.arange(num_classes) + 0.5) / num_classes
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
