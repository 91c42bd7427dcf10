"""Feature-distributed SVRG over q feature shards and the comm fabric.

Each worker owns a row block of the data and the matching parameter slice.
Per outer loop: one length-N tree sum turns the per-shard partials
w^(l)'D^(l) into the global margins w'D on every worker (2qN scalars), each
worker forms its loss-gradient slice z^(l), and every inner batch of u
sampled instances costs one length-u tree sum (2qu scalars).  The snapshot
margins w~_0'x_i are served from the cached full-gradient sum, never
re-communicated.

All workers draw the shared instance sequence from identically seeded
streams, so index agreement costs no messages.
"""
from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass

import numpy as np

from . import model
from .comm import (
    PHASE_FULL_GRADIENT,
    PHASE_INNER_LOOP,
    PHASE_INSTRUMENTATION,
    CommLedger,
    TreeReducer,
    make_fabric,
)
from .data import FeatureShard, column
from .runtime import (
    BlockDot,
    DivergenceError,
    IndexStream,
    RunConfig,
    TraceRecord,
    apply_inner_update,
    objective_from_margins,
    reg_value_from_norm,
)


@dataclass
class FdResult:
    weights: np.ndarray
    trace: list[TraceRecord]
    ledger: CommLedger


def expected_scalars_per_outer(q: int, n: int, cfg: RunConfig) -> int:
    """Closed-form algorithm-phase cost of one outer loop."""
    return 2 * q * n + 2 * q * cfg.effective_inner_steps


class FeatureWorker:
    """State and per-phase computations of one feature worker."""

    def __init__(self, shard: FeatureShard, cfg: RunConfig,
                 reference_boundaries: list[int] | None = None):
        self.shard = shard
        self.cfg = cfg
        local_bounds = None
        if reference_boundaries is not None:
            inner = [b - shard.lo for b in reference_boundaries if shard.lo < b < shard.hi]
            local_bounds = [0] + inner + [shard.d_l]
        self.dot = BlockDot(shard.matrix, local_bounds)
        self.w = np.zeros(shard.d_l)
        self.w_tilde: np.ndarray | None = None
        self.z_local: np.ndarray | None = None
        self.snapshot_margins: np.ndarray | None = None

    def margin_contribution(self) -> list[np.ndarray]:
        return self.dot.margin_parts(self.w)

    def norm_contribution(self) -> list[np.ndarray]:
        sq = self.dot.sq_norm_parts(self.w)
        ab = self.dot.abs_norm_parts(self.w)
        return [np.array([s, a]) for s, a in zip(sq, ab)]

    def begin_inner(self, margins: np.ndarray) -> None:
        """Cache the tree-summed margins as the snapshot w~_0'D and form the
        local full-gradient slice."""
        self.snapshot_margins = margins
        coef = model.loss_coefficients(self.cfg.loss, self.shard.labels, margins)
        self.z_local = self.shard.matrix.dot(coef) / self.shard.labels.shape[0]
        self.w_tilde = self.w.copy()

    def inner_contribution(self, idx: list[int]) -> list[np.ndarray]:
        per_block: list[list[float]] | None = None
        for i in idx:
            parts = self.dot.margin_one_parts(self.w_tilde, i)
            if per_block is None:
                per_block = [[] for _ in parts]
            for b, p in enumerate(parts):
                per_block[b].append(p)
        return [np.asarray(b) for b in per_block]

    def apply_batch(self, idx: list[int], batch_margins: np.ndarray) -> None:
        labels = self.shard.labels
        for i, wm in zip(idx, batch_margins):
            y = labels[i]
            c_new = model.margin_loss_derivative(self.cfg.loss, y * wm) * y
            c_old = model.margin_loss_derivative(
                self.cfg.loss, y * self.snapshot_margins[i]) * y
            rows, vals = column(self.shard.matrix, i)
            apply_inner_update(self.w_tilde, self.cfg.step_size, c_new - c_old,
                               rows, vals, self.z_local, self.cfg.reg)

    def finish_outer(self) -> None:
        self.w = self.w_tilde


def _objective(margins: np.ndarray, norms: np.ndarray, labels, cfg: RunConfig) -> float:
    reg_term = reg_value_from_norm(cfg.reg, float(norms[0]), float(norms[1]))
    return objective_from_margins(margins, labels, cfg.loss, reg_term)


def fd_svrg_run(shards: list[FeatureShard], cfg: RunConfig,
                fabric=None,
                reference_boundaries: list[int] | None = None,
                w_star_objective: float | None = None,
                threaded: bool = False,
                record_seconds: bool = True) -> FdResult:
    """Run FD-SVRG (Option I) over the given feature shards.

    ``threaded`` runs each worker in its own thread with blocking
    collectives; the default round-robins the workers from a single
    deterministic driver.  Both modes produce bit-identical trajectories
    and ledgers.
    """
    if cfg.option != "I":
        raise ValueError("the feature-distributed runner supports Option I only")
    q = len(shards)
    if fabric is None:
        fabric = make_fabric("inproc")
    reducer = TreeReducer(fabric, q)
    workers = [FeatureWorker(s, cfg, reference_boundaries) for s in shards]
    labels = shards[0].labels
    n = labels.shape[0]

    if threaded:
        trace = _run_threaded(workers, reducer, cfg, labels, n,
                              w_star_objective, record_seconds)
    else:
        trace = _run_sequential(workers, reducer, cfg, labels, n,
                                w_star_objective, record_seconds)
    weights = np.concatenate([wk.w for wk in workers])
    return FdResult(weights, trace, fabric.ledger)


def _gap(obj: float, w_star_objective: float | None) -> float:
    return obj - w_star_objective if w_star_objective is not None else math.nan


def _run_sequential(workers, reducer, cfg, labels, n,
                    w_star_objective, record_seconds) -> list[TraceRecord]:
    ledger = reducer.fabric.ledger
    stream = IndexStream(cfg.seed)
    trace: list[TraceRecord] = []
    start = time.perf_counter()

    def elapsed():
        return time.perf_counter() - start if record_seconds else 0.0

    for t in range(cfg.outer_loops):
        snapshot = ledger.algorithm_total
        margins = reducer.reduce([wk.margin_contribution() for wk in workers],
                                 PHASE_FULL_GRADIENT)
        norms = reducer.reduce([wk.norm_contribution() for wk in workers],
                               PHASE_INSTRUMENTATION)
        obj = _objective(margins, norms, labels, cfg)
        trace.append(TraceRecord(t, obj, _gap(obj, w_star_objective), snapshot, elapsed()))
        if not math.isfinite(obj):
            raise DivergenceError(t)
        for wk in workers:
            wk.begin_inner(margins)
        for _ in range(cfg.n_batches):
            idx = stream.draw_batch(n, cfg.batch_size)
            batch = reducer.reduce([wk.inner_contribution(idx) for wk in workers],
                                   PHASE_INNER_LOOP)
            for wk in workers:
                wk.apply_batch(idx, batch)
        for wk in workers:
            wk.finish_outer()

    snapshot = ledger.algorithm_total
    margins = reducer.reduce([wk.margin_contribution() for wk in workers],
                             PHASE_INSTRUMENTATION)
    norms = reducer.reduce([wk.norm_contribution() for wk in workers],
                           PHASE_INSTRUMENTATION)
    obj = _objective(margins, norms, labels, cfg)
    trace.append(TraceRecord(cfg.outer_loops, obj, _gap(obj, w_star_objective),
                             snapshot, elapsed()))
    if not math.isfinite(obj):
        raise DivergenceError(cfg.outer_loops)
    return trace


def _run_threaded(workers, reducer, cfg, labels, n,
                  w_star_objective, record_seconds) -> list[TraceRecord]:
    ledger = reducer.fabric.ledger
    trace: list[TraceRecord] = []
    errors: list[BaseException] = []
    start = time.perf_counter()

    def loop(rank: int):
        wk = workers[rank]
        stream = IndexStream(cfg.seed)
        try:
            for t in range(cfg.outer_loops):
                snapshot = ledger.algorithm_total if rank == 0 else 0
                margins = reducer.contribute(rank, wk.margin_contribution(),
                                             PHASE_FULL_GRADIENT)
                norms = reducer.contribute(rank, wk.norm_contribution(),
                                           PHASE_INSTRUMENTATION)
                obj = _objective(margins, norms, labels, cfg)
                if rank == 0:
                    seconds = time.perf_counter() - start if record_seconds else 0.0
                    trace.append(TraceRecord(t, obj, _gap(obj, w_star_objective),
                                             snapshot, seconds))
                if not math.isfinite(obj):
                    raise DivergenceError(t)
                wk.begin_inner(margins)
                for _ in range(cfg.n_batches):
                    idx = stream.draw_batch(n, cfg.batch_size)
                    batch = reducer.contribute(rank, wk.inner_contribution(idx),
                                               PHASE_INNER_LOOP)
                    wk.apply_batch(idx, batch)
                wk.finish_outer()
            snapshot = ledger.algorithm_total if rank == 0 else 0
            margins = reducer.contribute(rank, wk.margin_contribution(),
                                         PHASE_INSTRUMENTATION)
            norms = reducer.contribute(rank, wk.norm_contribution(),
                                       PHASE_INSTRUMENTATION)
            obj = _objective(margins, norms, labels, cfg)
            if rank == 0:
                seconds = time.perf_counter() - start if record_seconds else 0.0
                trace.append(TraceRecord(cfg.outer_loops, obj,
                                         _gap(obj, w_star_objective), snapshot, seconds))
            if not math.isfinite(obj):
                raise DivergenceError(cfg.outer_loops)
        except BaseException as exc:  # propagate to the driver thread
            errors.append(exc)

    threads = [threading.Thread(target=loop, args=(rank,)) for rank in range(len(workers))]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if errors:
        raise errors[0]
    return trace
