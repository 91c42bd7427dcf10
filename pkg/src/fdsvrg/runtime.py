"""Shared run machinery: configs, traces, index streams, and the
block-structured inner-product helper that makes distributed and serial
runs bit-comparable.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .model import (
    LossKind,
    RegKind,
    Regularizer,
    margin_loss,
    regularizer_gradient,
    sequential_sum,
)


class DivergenceError(RuntimeError):
    def __init__(self, t: int, m: int | None = None):
        self.t = t
        self.m = m
        where = f"outer loop {t}" if m is None else f"outer loop {t}, inner step {m}"
        super().__init__(f"non-finite objective encountered at {where}")


@dataclass(frozen=True)
class RunConfig:
    step_size: float
    inner_steps: int
    outer_loops: int
    batch_size: int = 1
    option: str = "I"
    seed: int = 0
    loss: LossKind = LossKind.LOGISTIC
    reg: Regularizer = field(default_factory=lambda: Regularizer(RegKind.L2, 1e-4))

    def __post_init__(self):
        if self.step_size < 0:
            raise ValueError("step size must be >= 0")
        if self.inner_steps < 1 or self.outer_loops < 1 or self.batch_size < 1:
            raise ValueError("inner_steps, outer_loops and batch_size must be >= 1")
        if self.option not in ("I", "II"):
            raise ValueError(f"unknown averaging option {self.option!r}")

    @property
    def n_batches(self) -> int:
        return -(-self.inner_steps // self.batch_size)

    @property
    def effective_inner_steps(self) -> int:
        """Inner steps actually executed: rounded up to whole batches so
        every communicated batch carries exactly batch_size margins."""
        return self.n_batches * self.batch_size


@dataclass(frozen=True)
class TraceRecord:
    t: int
    objective: float
    gap: float
    comm_scalars: int
    seconds: float


def write_trace_csv(records: list[TraceRecord], path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "objective", "gap", "comm_scalars", "seconds"])
        for r in records:
            wr.writerow([r.t, repr(r.objective), repr(r.gap), r.comm_scalars, repr(r.seconds)])


def read_trace_csv(path) -> list[TraceRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(TraceRecord(int(row["t"]), float(row["objective"]),
                                   float(row["gap"]), int(row["comm_scalars"]),
                                   float(row["seconds"])))
    return out


class IndexStream:
    """Seeded counter-based index generator.  Every consumer constructed
    with the same seed yields the identical sequence, so q feature workers
    agree on i_m without spending any communication on it."""

    def __init__(self, seed: int):
        self._rng = np.random.Generator(np.random.Philox(seed))

    def draw(self, n: int) -> int:
        return int(self._rng.integers(0, n))

    def draw_batch(self, n: int, count: int) -> list[int]:
        return [self.draw(n) for _ in range(count)]


def spawn_seeds(seed: int, count: int) -> list[int]:
    """Derive independent per-worker seeds reproducibly."""
    ss = np.random.SeedSequence(seed)
    return [int(child.generate_state(1)[0]) for child in ss.spawn(count)]


class BlockDot:
    """Inner products of a sparse matrix against a weight vector, computed
    block by block over a fixed row partition with left-to-right block
    folds.  With one block this is the plain product; with the blocks of a
    feature partition it reproduces, bit for bit, the shard-ordered partial
    sums of a distributed run."""

    def __init__(self, matrix: sp.csc_matrix, boundaries: list[int] | None = None):
        d = matrix.shape[0]
        if boundaries is None:
            boundaries = [0, d]
        if boundaries[0] != 0 or boundaries[-1] != d or sorted(boundaries) != list(boundaries):
            raise ValueError(f"bad block boundaries {boundaries} for {d} rows")
        self.boundaries = list(boundaries)
        self._blocks = [matrix[lo:hi, :].tocsc()
                        for lo, hi in zip(boundaries, boundaries[1:])]

    def margin_parts(self, w: np.ndarray) -> list[np.ndarray]:
        """Per-block partial inner products w_b' D_b, one length-N array
        per block."""
        out = []
        for (lo, hi), blk in zip(zip(self.boundaries, self.boundaries[1:]), self._blocks):
            out.append(blk.T.dot(w[lo:hi]))
        return out

    def margins(self, w: np.ndarray) -> np.ndarray:
        parts = self.margin_parts(w)
        acc = parts[0].copy()
        for p in parts[1:]:
            acc += p
        return acc

    def margin_one_parts(self, w: np.ndarray, i: int) -> list[float]:
        """Per-block partials of w'x_i.  The running (cumsum) accumulation
        reproduces the sparse matvec of :meth:`margin_parts` bit for bit,
        so cached and recomputed margins agree exactly."""
        out = []
        for (lo, hi), blk in zip(zip(self.boundaries, self.boundaries[1:]), self._blocks):
            s, e = blk.indptr[i], blk.indptr[i + 1]
            prod = w[lo:hi][blk.indices[s:e]] * blk.data[s:e]
            out.append(float(np.cumsum(prod)[-1]) if prod.size else 0.0)
        return out

    def margin_one(self, w: np.ndarray, i: int) -> float:
        return fold_scalars(self.margin_one_parts(w, i))

    def sq_norm_parts(self, w: np.ndarray) -> list[float]:
        return [float(np.dot(w[lo:hi], w[lo:hi]))
                for lo, hi in zip(self.boundaries, self.boundaries[1:])]

    def abs_norm_parts(self, w: np.ndarray) -> list[float]:
        return [float(np.sum(np.abs(w[lo:hi])))
                for lo, hi in zip(self.boundaries, self.boundaries[1:])]


def fold_scalars(parts: list[float]) -> float:
    acc = parts[0]
    for p in parts[1:]:
        acc = acc + p
    return acc


def reg_value_from_norm(reg: Regularizer, sq_norm: float, abs_norm: float) -> float:
    if reg.kind is RegKind.L2:
        return 0.5 * reg.lam * sq_norm
    return reg.lam * abs_norm


def objective_from_margins(raw_margins: np.ndarray, labels: np.ndarray,
                           loss: LossKind, reg_term: float) -> float:
    """f(w) given the already-communicated margin vector w'D and the
    regularizer value."""
    losses = margin_loss(loss, labels * raw_margins)
    return sequential_sum(losses) / labels.shape[0] + reg_term


def apply_inner_update(w: np.ndarray, eta: float, coef_diff: float,
                       idx: np.ndarray, vals: np.ndarray,
                       z: np.ndarray, reg: Regularizer) -> None:
    """In-place variance-reduced step on a parameter (slice):

        w <- w - eta * (coef_diff * x + z + grad_g(w))

    where coef_diff * x is the sparse difference of the two stochastic
    loss gradients and z is the loss-only full gradient (slice).  The
    serial runner and every feature worker apply this same elementwise
    expression, which keeps their trajectories bit-identical.
    """
    direction = z + regularizer_gradient(reg, w)
    direction[idx] += coef_diff * vals
    w -= eta * direction


class GradEvalCounter:
    """Counts fresh component-gradient evaluations (snapshot margins are
    cached, so one inner step costs one evaluation)."""

    def __init__(self):
        self.full = 0
        self.inner = 0

    @property
    def total(self) -> int:
        return self.full + self.inner
