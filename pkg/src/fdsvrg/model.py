"""Losses, regularizers, and objective/gradient evaluation for regularized
linear classifiers.

The model is f(w) = (1/N) sum_i phi(y_i * w'x_i) + g(w) with phi either the
logistic loss or the hinge loss and g an L2 or L1 penalty.  All reductions
over instances run in left-to-right instance order; downstream equivalence
tests rely on that order being stable.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

# Below this margin the naive log(1 + e^{-z}) overflows; switch to the
# algebraically equal -z + log(1 + e^{z}) branch.
_SOFTPLUS_SWITCH = -30.0


class LossKind(enum.Enum):
    LOGISTIC = "logistic"
    HINGE = "hinge"


class RegKind(enum.Enum):
    L2 = "l2"
    L1 = "l1"


@dataclass(frozen=True)
class Regularizer:
    kind: RegKind
    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"regularizer strength must be >= 0, got {self.lam}")


def sequential_sum(values) -> float:
    """Left-to-right float64 sum. The canonical reduction order for all
    per-instance accumulations."""
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.cumsum(a)[-1])


def _check_finite(z: np.ndarray) -> None:
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite margin value")


def margin_loss(kind: LossKind, z):
    """Loss as a function of the margin z = y * w'x."""
    arr = np.asarray(z, dtype=np.float64)
    _check_finite(arr)
    if kind is LossKind.LOGISTIC:
        out = np.empty_like(arr, dtype=np.float64)
        low = arr < _SOFTPLUS_SWITCH
        out[low] = -arr[low] + np.log1p(np.exp(arr[low]))
        out[~low] = np.log1p(np.exp(-arr[~low]))
    elif kind is LossKind.HINGE:
        out = np.maximum(0.0, 1.0 - arr)
    else:
        raise ValueError(f"unknown loss kind: {kind}")
    return float(out) if np.isscalar(z) or arr.ndim == 0 else out


def margin_loss_derivative(kind: LossKind, z):
    """d(loss)/dz.  Gradient contribution of instance i is
    derivative * y_i * x_i.  Hinge subgradient at z == 1 is 0."""
    arr = np.asarray(z, dtype=np.float64)
    _check_finite(arr)
    if kind is LossKind.LOGISTIC:
        out = -expit(-arr)
    elif kind is LossKind.HINGE:
        out = np.where(arr < 1.0, -1.0, 0.0)
    else:
        raise ValueError(f"unknown loss kind: {kind}")
    return float(out) if np.isscalar(z) or arr.ndim == 0 else out


def regularizer_value(reg: Regularizer, w: np.ndarray) -> float:
    if reg.kind is RegKind.L2:
        return 0.5 * reg.lam * float(np.dot(w, w))
    return reg.lam * float(np.sum(np.abs(w)))


def regularizer_gradient(reg: Regularizer, w_slice: np.ndarray) -> np.ndarray:
    """Gradient (subgradient for L1, sign(0) = 0) of the penalty on a
    parameter slice."""
    if reg.kind is RegKind.L2:
        return reg.lam * w_slice
    return reg.lam * np.sign(w_slice)


def loss_coefficients(kind: LossKind, labels: np.ndarray, raw_margins: np.ndarray) -> np.ndarray:
    """Scalar coefficient c_i such that the loss part of grad f_i is c_i * x_i.

    ``raw_margins`` holds w'x_i (not multiplied by the label)."""
    return margin_loss_derivative(kind, labels * raw_margins) * labels


def full_objective(data, w: np.ndarray, loss: LossKind, reg: Regularizer) -> float:
    """f(w) over the whole dataset."""
    if w.shape[0] != data.d:
        raise ValueError(f"w has length {w.shape[0]}, expected d={data.d}")
    raw = data.features.T.dot(w)
    losses = margin_loss(loss, data.labels * raw)
    return sequential_sum(losses) / data.n + regularizer_value(reg, w)


def full_gradient(data, w: np.ndarray, loss: LossKind, reg: Regularizer) -> np.ndarray:
    """grad f(w) over the whole dataset."""
    if w.shape[0] != data.d:
        raise ValueError(f"w has length {w.shape[0]}, expected d={data.d}")
    raw = data.features.T.dot(w)
    coef = loss_coefficients(loss, data.labels, raw)
    return data.features.dot(coef) / data.n + regularizer_gradient(reg, w)
