"""Convergence-rate machinery: smoothness/strong-convexity constants,
the one-outer-loop contraction bound, and its Monte-Carlo verification.

For mu-strongly-convex f and L-smooth components, one inner loop of length
M contracts the expected squared distance to the optimum by at most

    rho = a^M + b / (1 - a),    a = 1 - mu*eta + 2*L^2*eta^2,
                                b = 2*L^2*eta^2,

provided a < 1.  The bound is probabilistic, so it is checked in
expectation over seeded trials with explicit Monte-Carlo slack.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .model import LossKind, RegKind, Regularizer
from .runtime import IndexStream, RunConfig
from .serial import svrg_run


@dataclass(frozen=True)
class ConvexityConstants:
    mu: float
    smoothness: float
    source: str = "analytic"

    def __post_init__(self):
        if not 0 < self.mu <= self.smoothness:
            raise ValueError(
                f"need 0 < mu <= L, got mu={self.mu}, L={self.smoothness}")


@dataclass(frozen=True)
class ContractionBound:
    a: float
    b: float
    rho: float | None

    @property
    def defined(self) -> bool:
        return self.rho is not None

    @property
    def contractive(self) -> bool:
        return self.rho is not None and self.rho < 1.0


def logistic_constants(data: LabeledDataset, lam: float) -> ConvexityConstants:
    """Analytic constants for L2-regularized logistic regression:
    mu = lam, L = lam + max_i ||x_i||^2 / 4 (the logistic curvature is at
    most 1/4)."""
    if lam <= 0:
        raise ValueError("lam must be > 0 for strong convexity")
    sq = np.asarray(data.features.multiply(data.features).sum(axis=0)).ravel()
    max_sq = float(sq.max()) if sq.size else 0.0
    return ConvexityConstants(mu=lam, smoothness=lam + 0.25 * max_sq)


def contraction_bound(consts: ConvexityConstants, eta: float, m_steps: int) -> ContractionBound:
    if eta <= 0:
        raise ValueError("step size must be > 0")
    a = 1.0 - consts.mu * eta + 2.0 * consts.smoothness ** 2 * eta ** 2
    b = 2.0 * consts.smoothness ** 2 * eta ** 2
    if a >= 1.0:
        return ContractionBound(a, b, None)
    return ContractionBound(a, b, a ** m_steps + b / (1.0 - a))


@dataclass
class ContractionReport:
    bound: ContractionBound
    start_sq_dist: float
    empirical_mean_sq_dist: float
    trials: int
    passed: bool

    @property
    def empirical_ratio(self) -> float:
        return self.empirical_mean_sq_dist / self.start_sq_dist


def verify_contraction(data: LabeledDataset, reg_lam: float,
                       consts: ConvexityConstants, eta: float, m_steps: int,
                       trials: int, w_start: np.ndarray, w_star: np.ndarray,
                       seed: int = 0) -> ContractionReport:
    """Run ``trials`` seeded one-outer-loop SVRG passes from ``w_start`` and
    compare the mean squared distance to w* against the bound with
    (1 + 3/sqrt(trials)) slack."""
    bound = contraction_bound(consts, eta, m_steps)
    if not bound.contractive:
        raise ValueError("configuration is not contractive (rho >= 1 or undefined)")
    reg = Regularizer(RegKind.L2, reg_lam)
    start_sq = float(np.dot(w_start - w_star, w_start - w_star))
    acc = 0.0
    for r in range(trials):
        cfg = RunConfig(step_size=eta, inner_steps=m_steps, outer_loops=1,
                        seed=seed + r, loss=LossKind.LOGISTIC, reg=reg)
        res = svrg_run(data, cfg, stream=IndexStream(seed + r), w0=w_start,
                       record_seconds=False)
        diff = res.weights - w_star
        acc += float(np.dot(diff, diff))
    mean_sq = acc / trials
    slack = 1.0 + 3.0 / math.sqrt(trials)
    passed = mean_sq <= bound.rho * start_sq * slack
    return ContractionReport(bound, start_sq, mean_sq, trials, passed)


def write_report_csv(path, rows: list[tuple[str, ContractionReport]]):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["config", "a", "b", "rho", "empirical_ratio", "pass"])
        for name, rep in rows:
            wr.writerow([name, repr(rep.bound.a), repr(rep.bound.b),
                         repr(rep.bound.rho), repr(rep.empirical_ratio),
                         int(rep.passed)])
