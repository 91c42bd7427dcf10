"""Instance-distributed SVRG baselines on a simulated parameter server
with p servers and q workers.

SynSVRG: per outer loop the servers broadcast w_t (q*d scalars), workers
push local gradient sums (q*d), then M synchronous rounds each broadcast
w~_m and collect one variance-reduced gradient per worker (2*q*d), so the
ledger grows by exactly 2*q*d*(1+M) per outer loop.  Vectors are accounted
densely: a length-d slice set costs d scalars even when sparse.

AsySVRG: the same full-gradient phase, then workers free-run pull ->
compute -> push until the servers have absorbed M pushes and raise the end
signal.  Asynchrony is a seeded discrete scheduler, not wall-clock racing:
at most staleness+1 pulls are in flight and pushes retire in pull order,
which bounds every push's parameter lag by the staleness parameter and
makes runs replayable.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import model
from .comm import (
    PHASE_FULL_GRADIENT,
    PHASE_INNER_LOOP,
    PHASE_PARAMETER_EXCHANGE,
    CommLedger,
    make_fabric,
    server,
    worker,
)
from .data import InstanceShard, block_boundaries, column
from .model import sequential_sum
from .runtime import (
    DivergenceError,
    IndexStream,
    RunConfig,
    TraceRecord,
    spawn_seeds,
)


@dataclass(frozen=True)
class AsyncSchedule:
    seed: int = 0
    max_staleness: int = 0
    policy: str = "round_robin"

    def __post_init__(self):
        if self.max_staleness < 0:
            raise ValueError("staleness bound must be >= 0")
        if self.policy not in ("round_robin", "random"):
            raise ValueError(f"unknown scheduling policy {self.policy!r}")


@dataclass
class PsResult:
    weights: np.ndarray
    trace: list[TraceRecord]
    ledger: CommLedger
    end_signals_per_outer: list[int]


def objective_over_shards(shards: list[InstanceShard], w: np.ndarray,
                          loss, reg) -> float:
    total = 0.0
    n = 0
    for s in shards:
        raw = s.matrix.T.dot(w)
        total += sequential_sum(model.margin_loss(loss, s.labels * raw))
        n += s.n_k
    return total / n + model.regularizer_value(reg, w)


def _exchange(fabric, sender, receiver, payload, phase):
    """Send and immediately deliver (the simulation is sequential)."""
    fabric.send(sender, receiver, payload, phase)
    fabric.recv(receiver)


def _component_gradient(shard: InstanceShard, i: int, w: np.ndarray,
                        cfg: RunConfig) -> np.ndarray:
    rows, vals = column(shard.matrix, i)
    y = shard.labels[i]
    margin = float(np.dot(w[rows], vals))
    coef = model.margin_loss_derivative(cfg.loss, y * margin) * y
    grad = model.regularizer_gradient(cfg.reg, w).astype(np.float64, copy=True)
    grad[rows] += coef * vals
    return grad


def _local_gradient_sum(shard: InstanceShard, w: np.ndarray, cfg: RunConfig) -> np.ndarray:
    raw = shard.matrix.T.dot(w)
    coef = model.loss_coefficients(cfg.loss, shard.labels, raw)
    return shard.matrix.dot(coef) + shard.n_k * model.regularizer_gradient(cfg.reg, w)


def _full_gradient_phase(fabric, shards, server_bounds, w_t, cfg, n):
    """Broadcast w_t, collect the workers' local gradient sums, form z."""
    q, p = len(shards), len(server_bounds) - 1
    for k in range(p):
        lo, hi = server_bounds[k], server_bounds[k + 1]
        for l in range(q):
            _exchange(fabric, server(k), worker(l), w_t[lo:hi], PHASE_PARAMETER_EXCHANGE)
    z = np.zeros_like(w_t)
    for l, shard in enumerate(shards):
        z_l = _local_gradient_sum(shard, w_t, cfg)
        for k in range(p):
            lo, hi = server_bounds[k], server_bounds[k + 1]
            _exchange(fabric, worker(l), server(k), z_l[lo:hi], PHASE_FULL_GRADIENT)
        z += z_l
    return z / n


def _register_all(fabric, q, p):
    for l in range(q):
        fabric.register(worker(l))
    for k in range(p):
        fabric.register(server(k))


def synsvrg_run(shards: list[InstanceShard], p: int, cfg: RunConfig,
                streams: list[IndexStream] | None = None,
                fabric=None, w_star_objective: float | None = None,
                record_seconds: bool = True) -> PsResult:
    q = len(shards)
    d = shards[0].matrix.shape[0]
    if p < 1 or p > d:
        raise ValueError(f"server count {p} must be in [1, d]")
    n = sum(s.n_k for s in shards)
    if fabric is None:
        fabric = make_fabric("inproc")
    _register_all(fabric, q, p)
    server_bounds = block_boundaries(d, p)
    if streams is None:
        streams = [IndexStream(s) for s in spawn_seeds(cfg.seed, q)]

    w = np.zeros(d)
    trace: list[TraceRecord] = []
    start = time.perf_counter()

    def elapsed():
        return time.perf_counter() - start if record_seconds else 0.0

    def gap(obj):
        return obj - w_star_objective if w_star_objective is not None else math.nan

    for t in range(cfg.outer_loops):
        snapshot = fabric.ledger.algorithm_total
        obj = objective_over_shards(shards, w, cfg.loss, cfg.reg)
        trace.append(TraceRecord(t, obj, gap(obj), snapshot, elapsed()))
        if not math.isfinite(obj):
            raise DivergenceError(t)

        z = _full_gradient_phase(fabric, shards, server_bounds, w, cfg, n)
        w_tilde = w.copy()
        for _ in range(cfg.inner_steps):
            for k in range(p):
                lo, hi = server_bounds[k], server_bounds[k + 1]
                for l in range(q):
                    _exchange(fabric, server(k), worker(l), w_tilde[lo:hi],
                              PHASE_INNER_LOOP)
            avg = np.zeros(d)
            for l, shard in enumerate(shards):
                i = streams[l].draw(shard.n_k)
                g = (_component_gradient(shard, i, w_tilde, cfg)
                     - _component_gradient(shard, i, w, cfg))
                for k in range(p):
                    lo, hi = server_bounds[k], server_bounds[k + 1]
                    _exchange(fabric, worker(l), server(k), g[lo:hi],
                              PHASE_INNER_LOOP)
                avg += g
            w_tilde -= cfg.step_size * (avg / q + z)
        w = w_tilde

    snapshot = fabric.ledger.algorithm_total
    obj = objective_over_shards(shards, w, cfg.loss, cfg.reg)
    trace.append(TraceRecord(cfg.outer_loops, obj, gap(obj), snapshot, elapsed()))
    return PsResult(w, trace, fabric.ledger, [])


class ScheduleViolation(AssertionError):
    pass


def asysvrg_run(shards: list[InstanceShard], p: int, cfg: RunConfig,
                schedule: AsyncSchedule,
                streams: list[IndexStream] | None = None,
                fabric=None, w_star_objective: float | None = None,
                record_seconds: bool = True) -> PsResult:
    q = len(shards)
    d = shards[0].matrix.shape[0]
    if p < 1 or p > d:
        raise ValueError(f"server count {p} must be in [1, d]")
    n = sum(s.n_k for s in shards)
    if fabric is None:
        fabric = make_fabric("inproc")
    _register_all(fabric, q, p)
    server_bounds = block_boundaries(d, p)
    if streams is None:
        streams = [IndexStream(s) for s in spawn_seeds(cfg.seed, q)]
    sched_rng = np.random.Generator(np.random.Philox(schedule.seed))
    tau = schedule.max_staleness

    w = np.zeros(d)
    trace: list[TraceRecord] = []
    end_signals: list[int] = []
    start = time.perf_counter()

    def elapsed():
        return time.perf_counter() - start if record_seconds else 0.0

    def gap(obj):
        return obj - w_star_objective if w_star_objective is not None else math.nan

    for t in range(cfg.outer_loops):
        snapshot = fabric.ledger.algorithm_total
        obj = objective_over_shards(shards, w, cfg.loss, cfg.reg)
        trace.append(TraceRecord(t, obj, gap(obj), snapshot, elapsed()))
        if not math.isfinite(obj):
            raise DivergenceError(t)

        z = _full_gradient_phase(fabric, shards, server_bounds, w, cfg, n)
        w_tilde = w.copy()
        m = 0
        # FIFO of in-flight pulls: (worker rank, pulled copy, m at pull time)
        in_flight: list[tuple[int, np.ndarray, int]] = []
        holding = set()
        rr_pointer = 0

        def admissible():
            acts = []
            for l in range(q):
                if l in holding:
                    if in_flight and in_flight[0][0] == l:
                        acts.append((l, "push"))
                elif len(in_flight) <= tau:
                    acts.append((l, "pull"))
            return acts

        while m < cfg.inner_steps:
            acts = admissible()
            if schedule.policy == "round_robin":
                by_rank = {l: a for l, a in acts}
                while rr_pointer % q not in by_rank:
                    rr_pointer += 1
                l = rr_pointer % q
                action = by_rank[l]
                rr_pointer += 1
            else:
                l, action = acts[int(sched_rng.integers(0, len(acts)))]
            if action == "pull":
                for k in range(p):
                    lo, hi = server_bounds[k], server_bounds[k + 1]
                    _exchange(fabric, server(k), worker(l), w_tilde[lo:hi],
                              PHASE_INNER_LOOP)
                in_flight.append((l, w_tilde.copy(), m))
                holding.add(l)
            else:
                _, pulled, m_pulled = in_flight.pop(0)
                holding.discard(l)
                if m - m_pulled > tau:
                    raise ScheduleViolation(
                        f"staleness {m - m_pulled} exceeds bound {tau}")
                shard = shards[l]
                i = streams[l].draw(shard.n_k)
                g = (_component_gradient(shard, i, pulled, cfg)
                     - _component_gradient(shard, i, w, cfg))
                for k in range(p):
                    lo, hi = server_bounds[k], server_bounds[k + 1]
                    _exchange(fabric, worker(l), server(k), g[lo:hi],
                              PHASE_INNER_LOOP)
                w_tilde -= cfg.step_size * (g + z)
                m += 1

        # End signal: one zero-scalar control edge per worker; stranded
        # in-flight pulls are discarded.
        for l in range(q):
            fabric.ledger.record(PHASE_PARAMETER_EXCHANGE, server(0), worker(l), 0)
        end_signals.append(q)
        w = w_tilde

    snapshot = fabric.ledger.algorithm_total
    obj = objective_over_shards(shards, w, cfg.loss, cfg.reg)
    trace.append(TraceRecord(cfg.outer_loops, obj, gap(obj), snapshot, elapsed()))
    return PsResult(w, trace, fabric.ledger, end_signals)
