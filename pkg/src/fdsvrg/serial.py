"""Non-distributed SVRG with Option I / Option II averaging.

Serves as the correctness oracle for the distributed runners and as the
one-worker baseline for speedup measurements.  The inner update is applied
in the collapsed form

    w~ <- w~ - eta * ((c_m - c_0) * x_i + z_loss + grad_g(w~))

which is Algorithm line "grad f_i(w~_m) - grad f_i(w~_0) + z" with the
regularizer terms cancelled analytically; z_loss is the loss-only full
gradient.  At m = 0 the sparse part cancels exactly and the direction is
the full gradient.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import model
from .data import LabeledDataset, column
from .runtime import (
    BlockDot,
    DivergenceError,
    GradEvalCounter,
    IndexStream,
    RunConfig,
    TraceRecord,
    apply_inner_update,
    fold_scalars,
    objective_from_margins,
    reg_value_from_norm,
)


@dataclass
class SvrgResult:
    weights: np.ndarray
    trace: list[TraceRecord]
    grad_evals: GradEvalCounter


def _evaluate(dot: BlockDot, data: LabeledDataset, w: np.ndarray,
              cfg: RunConfig) -> tuple[np.ndarray, float]:
    margins = dot.margins(w)
    reg_term = reg_value_from_norm(cfg.reg,
                                   fold_scalars(dot.sq_norm_parts(w)),
                                   fold_scalars(dot.abs_norm_parts(w)))
    obj = objective_from_margins(margins, data.labels, cfg.loss, reg_term)
    return margins, obj


def svrg_run(data: LabeledDataset, cfg: RunConfig,
             stream: IndexStream | None = None,
             w0: np.ndarray | None = None,
             w_star_objective: float | None = None,
             blocks: list[int] | None = None,
             record_seconds: bool = True) -> SvrgResult:
    """Run T outer loops of SVRG.

    ``blocks`` selects the canonical feature-block summation order for all
    inner products (see :class:`BlockDot`); with the boundaries of a
    q-way feature partition the trajectory is bit-identical to the
    feature-distributed run with the same seed.
    """
    if stream is None:
        stream = IndexStream(cfg.seed)
    option_rng = np.random.Generator(np.random.Philox(key=cfg.seed, counter=1))

    n, eta = data.n, cfg.step_size
    w = np.zeros(data.d) if w0 is None else np.array(w0, dtype=np.float64)
    dot = BlockDot(data.features, blocks)
    evals = GradEvalCounter()
    trace: list[TraceRecord] = []
    start = time.perf_counter()

    def elapsed():
        return time.perf_counter() - start if record_seconds else 0.0

    def gap(obj):
        return obj - w_star_objective if w_star_objective is not None else math.nan

    for t in range(cfg.outer_loops):
        margins, obj = _evaluate(dot, data, w, cfg)
        trace.append(TraceRecord(t, obj, gap(obj), 0, elapsed()))
        if not math.isfinite(obj):
            raise DivergenceError(t)

        coef0 = model.loss_coefficients(cfg.loss, data.labels, margins)
        z_loss = data.features.dot(coef0) / n
        evals.full += n

        w_tilde = w.copy()
        snapshot_margins = margins
        pick = int(option_rng.integers(1, cfg.inner_steps + 1)) if cfg.option == "II" else None
        picked = None

        m = 0
        for _ in range(cfg.n_batches):
            idx = stream.draw_batch(n, cfg.batch_size)
            batch_margins = [dot.margin_one(w_tilde, i) for i in idx]
            evals.inner += len(idx)
            for i, wm in zip(idx, batch_margins):
                y = data.labels[i]
                c_new = model.margin_loss_derivative(cfg.loss, y * wm) * y
                c_old = model.margin_loss_derivative(cfg.loss, y * snapshot_margins[i]) * y
                rows, vals = column(data.features, i)
                apply_inner_update(w_tilde, eta, c_new - c_old, rows, vals, z_loss, cfg.reg)
                m += 1
                if pick is not None and m == pick:
                    picked = w_tilde.copy()
        w = picked if pick is not None and picked is not None else w_tilde

    _, obj = _evaluate(dot, data, w, cfg)
    if not math.isfinite(obj):
        raise DivergenceError(cfg.outer_loops)
    trace.append(TraceRecord(cfg.outer_loops, obj, gap(obj), 0, elapsed()))
    return SvrgResult(w, trace, evals)


def solve_reference(data: LabeledDataset, loss, reg, *,
                    step_size: float, inner_steps: int | None = None,
                    grad_tol: float = 1e-12, max_outer: int = 2000,
                    seed: int = 123) -> np.ndarray:
    """Long-run SVRG oracle: iterate until the full gradient norm drops
    below ``grad_tol``.  Used to produce w* for gap curves and
    contraction checks."""
    m_steps = inner_steps if inner_steps is not None else data.n
    stream = IndexStream(seed)
    w = np.zeros(data.d)
    cfg = RunConfig(step_size=step_size, inner_steps=m_steps, outer_loops=1,
                    seed=seed, loss=loss, reg=reg)
    for _ in range(max_outer):
        g = model.full_gradient(data, w, loss, reg)
        if float(np.linalg.norm(g)) < grad_tol:
            return w
        res = svrg_run(data, cfg, stream=stream, w0=w, record_seconds=False)
        w = res.weights
    raise RuntimeError(
        f"reference solve did not reach gradient norm {grad_tol} in {max_outer} loops")
