"""Losses, regularizers, objective and gradient checks against
closed-form values and finite-difference oracles."""
import math

import numpy as np
import pytest
import scipy.sparse as sp

from fdsvrg.model import (
    LossKind,
    RegKind,
    Regularizer,
    full_gradient,
    full_objective,
    margin_loss,
    margin_loss_derivative,
    regularizer_gradient,
    regularizer_value,
    sequential_sum,
)
from fdsvrg.data import LabeledDataset
from fdsvrg.serial import solve_reference
from fdsvrg.synthetic import make_synthetic

L2 = Regularizer(RegKind.L2, 1e-2)


def small_dataset(d=10, n=20, seed=0):
    return make_synthetic(d, n, sparsity=0.6, seed=seed)


def test_logistic_loss_at_zero_margin():
    assert abs(margin_loss(LossKind.LOGISTIC, 0.0) - math.log(2.0)) < 1e-15


def test_hinge_loss_at_unit_margin():
    assert margin_loss(LossKind.HINGE, 1.0) == 0.0


def test_logistic_loss_deep_negative_margin():
    # log(1 + e^{50}) = 50 + log(1 + e^{-50}); the correction term is ~2e-22.
    assert abs(margin_loss(LossKind.LOGISTIC, -50.0) - 50.0) < 1e-9


def test_logistic_loss_no_overflow_far_out():
    v = margin_loss(LossKind.LOGISTIC, -1e4)
    assert math.isfinite(v) and abs(v - 1e4) < 1e-9


def test_logistic_derivative_at_zero():
    assert margin_loss_derivative(LossKind.LOGISTIC, 0.0) == -0.5


def test_hinge_derivative_inactive():
    assert margin_loss_derivative(LossKind.HINGE, 2.0) == 0.0


def test_hinge_derivative_active_and_tie():
    assert margin_loss_derivative(LossKind.HINGE, 0.5) == -1.0
    assert margin_loss_derivative(LossKind.HINGE, 1.0) == 0.0


def test_logistic_derivative_matches_finite_difference_at_one():
    h = 1e-6
    fd = (margin_loss(LossKind.LOGISTIC, 1.0 + h)
          - margin_loss(LossKind.LOGISTIC, 1.0 - h)) / (2 * h)
    assert abs(margin_loss_derivative(LossKind.LOGISTIC, 1.0) - fd) < 1e-6
    assert abs(margin_loss_derivative(LossKind.LOGISTIC, 1.0) + 0.268941) < 1e-5


def test_non_finite_margin_rejected():
    for bad in (math.nan, math.inf, -math.inf):
        with pytest.raises(ValueError):
            margin_loss(LossKind.LOGISTIC, bad)
        with pytest.raises(ValueError):
            margin_loss_derivative(LossKind.HINGE, bad)


def test_softplus_identity_grid():
    # log(1+e^{z}) - log(1+e^{-z}) = z, checked across both branches.
    z = np.linspace(-30.0, 30.0, 6001)
    lhs = margin_loss(LossKind.LOGISTIC, -z)
    rhs = margin_loss(LossKind.LOGISTIC, z) + z
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_logistic_loss_convex_positive_on_grid():
    z = np.linspace(-30.0, 30.0, 601)
    v = margin_loss(LossKind.LOGISTIC, z)
    assert np.all(v > 0)
    assert np.all(v[:-2] + v[2:] - 2 * v[1:-1] >= -1e-12)


def test_derivative_matches_finite_difference_random_points():
    rng = np.random.default_rng(1)
    z = rng.uniform(-25, 25, size=1000)
    h = 1e-6
    for kind in (LossKind.LOGISTIC, LossKind.HINGE):
        pts = z[np.abs(z - 1.0) > 1e-3] if kind is LossKind.HINGE else z
        fd = (np.asarray(margin_loss(kind, pts + h))
              - np.asarray(margin_loss(kind, pts - h))) / (2 * h)
        assert np.max(np.abs(margin_loss_derivative(kind, pts) - fd)) < 1e-6


def test_l2_gradient_scaling():
    g = regularizer_gradient(Regularizer(RegKind.L2, 1e-4), np.array([2.0, -4.0]))
    assert np.array_equal(g, np.array([2e-4, -4e-4]))


def test_l1_gradient_sign_map():
    g = regularizer_gradient(Regularizer(RegKind.L1, 0.1), np.array([0.0, 3.0, -3.0]))
    assert np.array_equal(g, np.array([0.0, 0.1, -0.1]))


def test_zero_strength_gradient_is_zero():
    w = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(regularizer_gradient(Regularizer(RegKind.L2, 0.0), w),
                          np.zeros(3))


def test_negative_strength_rejected():
    with pytest.raises(ValueError):
        Regularizer(RegKind.L2, -1e-3)


def test_objective_at_zero_weights_logistic():
    data = small_dataset()
    obj = full_objective(data, np.zeros(data.d), LossKind.LOGISTIC, L2)
    assert abs(obj - math.log(2.0)) < 1e-15


def test_objective_at_zero_weights_hinge():
    data = small_dataset()
    obj = full_objective(data, np.zeros(data.d), LossKind.HINGE, L2)
    assert abs(obj - 1.0) < 1e-15


def test_objective_single_instance_hand_value():
    mat = sp.csc_matrix(np.array([[1.0], [0.0]]))
    data = LabeledDataset(mat, np.array([1.0]))
    obj = full_objective(data, np.array([1.0, 0.0]), LossKind.LOGISTIC,
                         Regularizer(RegKind.L2, 2.0))
    assert abs(obj - (math.log(1 + math.exp(-1.0)) + 1.0)) < 1e-15


def test_objective_dimension_mismatch():
    data = small_dataset()
    with pytest.raises(ValueError):
        full_objective(data, np.zeros(data.d + 1), LossKind.LOGISTIC, L2)
    with pytest.raises(ValueError):
        full_gradient(data, np.zeros(data.d - 1), LossKind.LOGISTIC, L2)


def test_gradient_at_zero_weights_unregularized():
    data = small_dataset()
    g = full_gradient(data, np.zeros(data.d), LossKind.LOGISTIC,
                      Regularizer(RegKind.L2, 0.0))
    expected = -data.features.dot(data.labels) / (2.0 * data.n)
    assert np.allclose(g, expected, rtol=0, atol=1e-15)


def test_gradient_matches_finite_differences():
    data = make_synthetic(10, 20, sparsity=0.7, seed=5)
    rng = np.random.default_rng(5)
    w = rng.normal(size=data.d)
    g = full_gradient(data, w, LossKind.LOGISTIC, L2)
    h = 1e-6
    for j in range(data.d):
        e = np.zeros(data.d)
        e[j] = h
        fd = (full_objective(data, w + e, LossKind.LOGISTIC, L2)
              - full_objective(data, w - e, LossKind.LOGISTIC, L2)) / (2 * h)
        assert abs(g[j] - fd) <= 1e-5 * max(1.0, abs(fd))


def test_gradient_vanishes_at_reference_optimum():
    data = make_synthetic(20, 50, sparsity=0.5, seed=9)
    w_star = solve_reference(data, LossKind.LOGISTIC, L2, step_size=0.02,
                             grad_tol=1e-10)
    g = full_gradient(data, w_star, LossKind.LOGISTIC, L2)
    assert float(np.linalg.norm(g)) < 1e-8


def test_objective_lower_bounded_by_optimum():
    data = make_synthetic(12, 30, sparsity=0.5, seed=11)
    w_star = solve_reference(data, LossKind.LOGISTIC, L2, step_size=0.02,
                             grad_tol=1e-10)
    f_star = full_objective(data, w_star, LossKind.LOGISTIC, L2)
    rng = np.random.default_rng(2)
    for _ in range(20):
        w = rng.normal(size=data.d)
        assert full_objective(data, w, LossKind.LOGISTIC, L2) >= f_star - 1e-12


def test_sequential_sum_is_left_to_right():
    rng = np.random.default_rng(3)
    vals = rng.normal(size=257)
    acc = 0.0
    for v in vals:
        acc += v
    assert sequential_sum(vals) == acc
    assert sequential_sum([]) == 0.0


def test_regularizer_value_forms():
    w = np.array([3.0, -4.0])
    assert regularizer_value(Regularizer(RegKind.L2, 0.2), w) == 0.1 * 25.0
    assert regularizer_value(Regularizer(RegKind.L1, 0.5), w) == 0.5 * 7.0
