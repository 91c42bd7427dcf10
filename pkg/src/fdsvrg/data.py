"""LIBSVM ingestion, sparse column storage, and the two partitioning schemes.

The data matrix D is d x N with one column per instance.  Feature
partitioning slices D by contiguous row blocks (every worker keeps all N
columns); instance partitioning slices by contiguous column blocks.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    """Sparse d x N feature matrix (CSC, column i = instance x_i) plus
    labels in {-1, +1}."""
    features: sp.csc_matrix
    labels: np.ndarray

    def __post_init__(self):
        if self.features.shape[1] != self.labels.shape[0]:
            raise ValueError(
                f"{self.features.shape[1]} columns but {self.labels.shape[0]} labels")
        if self.labels.size and not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")

    @property
    def d(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @property
    def nnz(self) -> int:
        return self.features.nnz


@dataclass(frozen=True)
class FeatureShard:
    """One worker's horizontal slice: global feature rows [lo, hi) over all
    N instances.  ``labels`` is the full label vector (every worker needs
    every y_i to form loss coefficients)."""
    index: int
    lo: int
    hi: int
    matrix: sp.csc_matrix
    labels: np.ndarray

    @property
    def d_l(self) -> int:
        return self.hi - self.lo


@dataclass(frozen=True)
class InstanceShard:
    """One worker's vertical slice: all d features of instances [lo, hi)."""
    index: int
    lo: int
    hi: int
    matrix: sp.csc_matrix
    labels: np.ndarray

    @property
    def n_k(self) -> int:
        return self.hi - self.lo


def parse_libsvm(source, n_features: int | None = None) -> LabeledDataset:
    """Parse LIBSVM text (`label idx:val ...`, 1-based ascending indices).

    ``source`` is a path, an open text file, or an iterable of lines.
    Labels <= 0 map to -1, > 0 to +1.  ``n_features`` forces the
    dimensionality (it must cover every index seen); otherwise d is the
    largest index in the stream.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r") as fh:
            return parse_libsvm(fh, n_features)

    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    labels: list[float] = []
    max_index = 0

    for lineno, line in enumerate(source, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            raw_label = float(parts[0])
        except ValueError:
            raise ParseError(f"line {lineno}: bad label {parts[0]!r}") from None
        labels.append(-1.0 if raw_label <= 0 else 1.0)
        prev = 0
        for token in parts[1:]:
            try:
                idx_str, val_str = token.split(":", 1)
                idx = int(idx_str)
                val = float(val_str)
            except ValueError:
                raise ParseError(f"line {lineno}: bad entry {token!r}") from None
            if idx < 1:
                raise ParseError(f"line {lineno}: index {idx} is not 1-based")
            if idx <= prev:
                raise ParseError(f"line {lineno}: indices not ascending at {token!r}")
            prev = idx
            indices.append(idx - 1)
            values.append(val)
        max_index = max(max_index, prev)
        indptr.append(len(indices))

    d = n_features if n_features is not None else max_index
    if max_index > d:
        raise ParseError(
            f"feature index {max_index} exceeds forced dimensionality {d}")
    mat = sp.csc_matrix(
        (np.asarray(values, dtype=np.float64),
         np.asarray(indices, dtype=np.int32),
         np.asarray(indptr, dtype=np.int32)),
        shape=(d, len(labels)))
    return LabeledDataset(mat, np.asarray(labels, dtype=np.float64))


def block_boundaries(total: int, parts: int) -> list[int]:
    """Boundaries [0, b_1, ..., total] of a balanced contiguous split:
    block sizes differ by at most one, larger blocks first."""
    base, rem = divmod(total, parts)
    bounds = [0]
    for j in range(parts):
        bounds.append(bounds[-1] + base + (1 if j < rem else 0))
    return bounds


def partition_by_feature(data: LabeledDataset, q: int) -> list[FeatureShard]:
    """Split D into q contiguous row blocks, balanced within one feature."""
    if q < 1:
        raise ValueError("q must be >= 1")
    if q > data.d:
        raise ValueError(f"cannot split {data.d} features over {q} workers")
    bounds = block_boundaries(data.d, q)
    shards = []
    for l in range(q):
        lo, hi = bounds[l], bounds[l + 1]
        shards.append(FeatureShard(l, lo, hi, data.features[lo:hi, :], data.labels))
    return shards


def partition_by_instance(data: LabeledDataset, q: int) -> list[InstanceShard]:
    """Split D into q contiguous column blocks, balanced within one instance."""
    if q < 1:
        raise ValueError("q must be >= 1")
    if q > data.n:
        raise ValueError(f"cannot split {data.n} instances over {q} workers")
    bounds = block_boundaries(data.n, q)
    shards = []
    for k in range(q):
        lo, hi = bounds[k], bounds[k + 1]
        shards.append(InstanceShard(k, lo, hi, data.features[:, lo:hi],
                                    data.labels[lo:hi]))
    return shards


def concat_feature_shards(shards: list[FeatureShard]) -> sp.csc_matrix:
    return sp.vstack([s.matrix for s in shards], format="csc")


def concat_instance_shards(shards: list[InstanceShard]) -> sp.csc_matrix:
    return sp.hstack([s.matrix for s in shards], format="csc")


def column(mat: sp.csc_matrix, i: int) -> tuple[np.ndarray, np.ndarray]:
    """Row indices and values of column i, ascending by row."""
    s, e = mat.indptr[i], mat.indptr[i + 1]
    return mat.indices[s:e], mat.data[s:e]
