"""Exact Euclidean k-NN over reference logit vectors, globally and per class."""

from __future__ import annotations

import csv

import numpy as np

from .exceptions import InsufficientClassSamplesError, InvalidArgumentError


class LogitIndex:
    """Immutable store of reference vectors with class labels.

    Queries are exact linear scans. Ties between equal distances resolve by row
    order, so the k-th distance is simply the k-th entry of the sorted distances.
    """

    def __init__(self, vectors, labels, num_classes=None):
        vectors = np.array(vectors, dtype=np.float64)
        labels = np.array(labels, dtype=np.int64).ravel()
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise InvalidArgumentError("index needs a non-empty 2-D matrix of vectors")
        if labels.shape[0] != vectors.shape[0]:
            raise InvalidArgumentError(
                f"{vectors.shape[0]} vectors but {labels.shape[0]} labels")
        if not np.all(np.isfinite(vectors)):
            raise InvalidArgumentError("index vectors must be finite")
        if np.any(labels < 0):
            raise InvalidArgumentError("labels must be non-negative")
        c = int(labels.max()) + 1 if num_classes is None else int(num_classes)
        if np.any(labels >= c):
            raise InvalidArgumentError(f"label out of range for {c} classes")
        vectors.setflags(write=False)
        labels.setflags(write=False)
        self._vectors = vectors
        self._labels = labels
        self._num_classes = c
        self._partitions = tuple(np.flatnonzero(labels == k) for k in range(c))
        for p in self._partitions:
            p.setflags(write=False)

    @property
    def vectors(self):
        return self._vectors

    @property
    def labels(self):
        return self._labels

    @property
    def num_classes(self):
        return self._num_classes

    @property
    def dim(self):
        return self._vectors.shape[1]

    def __len__(self):
        return self._vectors.shape[0]

    def partition(self, class_c: int) -> np.ndarray:
        return self._partitions[class_c]

    def _distances(self, queries: np.ndarray, rows=None) -> np.ndarray:
        ref = self._vectors if rows is None else self._vectors[rows]
        diff = queries[:, None, :] - ref[None, :, :]
        return np.sqrt(np.einsum("qnk,qnk->qn", diff, diff))

    def _queries(self, query):
        q = np.asarray(query, dtype=np.float64)
        single = q.ndim == 1
        q = np.atleast_2d(q)
        if q.shape[1] != self.dim:
            raise InvalidArgumentError(f"query dimension {q.shape[1]} != index dimension {self.dim}")
        if not np.all(np.isfinite(q)):
            raise InvalidArgumentError("query must be finite")
        return q, single

    def _block(self, n_rows: int) -> int:
        # keep the (block, rows, K) difference tensor near 2M floats
        return max(1, 2_000_000 // max(1, n_rows * self.dim))

    @staticmethod
    def _kth(d: np.ndarray, k: int, exclude_self: bool) -> np.ndarray:
        d = np.sort(d, axis=1)
        if exclude_self:
            # drop one exact match (distance 0) per query when present
            skip = (d[:, 0] == 0.0).astype(np.int64)
            return d[np.arange(d.shape[0]), k - 1 + skip]
        return d[:, k - 1]

    def kth_neighbor_distance(self, query, k: int, exclude_self: bool = False, block=None):
        """Distance from ``query`` (one vector or a batch) to its k-th nearest reference row."""
        q, single = self._queries(query)
        k = int(k)
        available = len(self) - (1 if exclude_self else 0)
        if k < 1 or k > available:
            raise InvalidArgumentError(f"k={k} outside [1, {available}]")
        out = np.empty(q.shape[0])
        block = block or self._block(len(self))
        for s in range(0, q.shape[0], block):
            d = self._distances(q[s:s + block])
            if exclude_self:
                # a query with no exact match still needs only k rows
                d = np.concatenate([d, np.full((d.shape[0], 1), np.inf)], axis=1)
            out[s:s + block] = self._kth(d, k, exclude_self)
        return float(out[0]) if single else out

    def kth_neighbor_distance_in_class(self, query, k: int, class_c: int,
                                       exclude_self: bool = False, block=None):
        """k-th nearest distance among rows labelled ``class_c``."""
        q, single = self._queries(query)
        if not 0 <= class_c < self._num_classes:
            raise InvalidArgumentError(f"class {class_c} outside [0, {self._num_classes})")
        rows = self._partitions[class_c]
        k = int(k)
        if k < 1:
            raise InvalidArgumentError("k must be >= 1")
        if rows.shape[0] < k:
            raise InsufficientClassSamplesError(class_c, rows.shape[0], k)
        out = np.empty(q.shape[0])
        block = block or self._block(rows.shape[0])
        for s in range(0, q.shape[0], block):
            d = self._distances(q[s:s + block], rows)
            if exclude_self:
                d = np.concatenate([d, np.full((d.shape[0], 1), np.inf)], axis=1)
            out[s:s + block] = self._kth(d, k, exclude_self)
        if exclude_self and np.any(np.isinf(out)):
            raise InsufficientClassSamplesError(class_c, rows.shape[0] - 1, k)
        return float(out[0]) if single else out

    def class_distances(self, query, k: int, exclude_self: bool = False) -> np.ndarray:
        """Matrix of class-conditioned k-th distances, shape ``(n_queries, C)``."""
        q, _ = self._queries(query)
        return np.stack([self.kth_neighbor_distance_in_class(q, k, c, exclude_self)
                         for c in range(self._num_classes)], axis=1)

    def to_csv(self, path) -> None:
        k = self.dim
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["input_id", "sample_id"] + [f"logit_{j}" for j in range(k)] + ["label"])
            for i, (v, y) in enumerate(zip(self._vectors, self._labels)):
                w.writerow([i, 0] + [repr(float(x)) for x in v] + [int(y)])

    @classmethod
    def from_csv(cls, path, num_classes=None) -> "LogitIndex":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            next(r)
            rows = [row for row in r if row]
        vectors = [[float(x) for x in row[2:-1]] for row in rows]
        labels = [int(row[-1]) for row in rows]
        return cls(vectors, labels, num_classes)


def build_index(vectors, labels, num_classes=None) -> LogitIndex:
    return LogitIndex(vectors, labels, num_classes)
