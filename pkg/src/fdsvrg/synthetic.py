"""Deterministic synthetic sparse classification problems: desk-scale
stand-ins for the large public LIBSVM datasets."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .data import LabeledDataset


def make_synthetic(d: int, n: int, sparsity: float = 1.0, seed: int = 0,
                   min_margin: float = 0.0, flip_prob: float = 0.0) -> LabeledDataset:
    """Sparse Gaussian features with labels from a planted hyperplane.

    Same seed, same bytes.  ``min_margin`` rejects instances whose planted
    score is too small (redrawn up to a bounded number of times);
    ``flip_prob`` flips each label independently afterwards.
    """
    if d < 1 or n < 1:
        raise ValueError("d and N must be >= 1")
    if not 0.0 < sparsity <= 1.0:
        raise ValueError("sparsity must be in (0, 1]")
    if not 0.0 <= flip_prob <= 1.0:
        raise ValueError("flip_prob must be in [0, 1]")
    rng = np.random.Generator(np.random.Philox(seed))
    w_true = rng.normal(size=d)

    indptr = [0]
    indices: list[np.ndarray] = []
    values: list[np.ndarray] = []
    labels = np.empty(n)
    for i in range(n):
        for _ in range(100):
            mask = rng.random(d) < sparsity
            rows = np.nonzero(mask)[0]
            vals = rng.normal(size=rows.size)
            score = float(np.dot(w_true[rows], vals))
            if abs(score) > min_margin:
                break
        else:
            raise RuntimeError("could not draw an instance clearing the margin")
        indices.append(rows)
        values.append(vals)
        indptr.append(indptr[-1] + rows.size)
        labels[i] = 1.0 if score > 0 else -1.0
    flips = rng.random(n) < flip_prob
    labels[flips] *= -1.0

    mat = sp.csc_matrix(
        (np.concatenate(values) if values else np.empty(0),
         np.concatenate(indices) if indices else np.empty(0, dtype=np.int32),
         np.asarray(indptr)),
        shape=(d, n))
    return LabeledDataset(mat, labels)
