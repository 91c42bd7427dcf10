"""Reference SVRG runner: hand-checked trajectories, averaging options,
variance-reduction identities, and linear convergence."""
import numpy as np
import pytest
import scipy.sparse as sp

from fdsvrg.data import LabeledDataset
from fdsvrg.model import LossKind, RegKind, Regularizer, full_gradient, full_objective
from fdsvrg.runtime import DivergenceError, IndexStream, RunConfig
from fdsvrg.serial import solve_reference, svrg_run
from fdsvrg.synthetic import make_synthetic

L2 = Regularizer(RegKind.L2, 1e-2)


def well_conditioned(d=20, n=50, seed=0, scale=0.3):
    base = make_synthetic(d, n, sparsity=0.8, seed=seed)
    return LabeledDataset(base.features * scale, base.labels)


def test_zero_step_size_means_no_movement():
    data = make_synthetic(8, 10, seed=1)
    cfg = RunConfig(step_size=0.0, inner_steps=5, outer_loops=3, seed=0, reg=L2)
    res = svrg_run(data, cfg)
    assert np.array_equal(res.weights, np.zeros(data.d))


def test_single_instance_matches_hand_gradient_descent():
    # One instance, M=1: each outer loop is a plain full-gradient step.
    mat = sp.csc_matrix(np.array([[1.0], [2.0]]))
    data = LabeledDataset(mat, np.array([1.0]))
    eta = 0.5
    cfg = RunConfig(step_size=eta, inner_steps=1, outer_loops=3, seed=0, reg=L2)
    res = svrg_run(data, cfg)
    w = np.zeros(2)
    for _ in range(3):
        w = w - eta * full_gradient(data, w, LossKind.LOGISTIC, L2)
    assert np.allclose(res.weights, w, rtol=0, atol=1e-15)


def test_first_inner_step_direction_is_full_gradient():
    # At m=0 the stochastic correction cancels exactly, so one outer loop
    # with M=1 is exactly one full-gradient step from any start.
    data = make_synthetic(12, 15, seed=4)
    rng = np.random.default_rng(4)
    w0 = rng.normal(size=data.d)
    cfg = RunConfig(step_size=0.1, inner_steps=1, outer_loops=1, seed=7, reg=L2)
    res = svrg_run(data, cfg, w0=w0)
    expected = w0 - 0.1 * full_gradient(data, w0, LossKind.LOGISTIC, L2)
    assert np.max(np.abs(res.weights - expected)) < 1e-15


def test_option_two_single_step_equals_option_one():
    data = make_synthetic(10, 20, seed=2)
    base = dict(step_size=0.05, inner_steps=1, outer_loops=5, seed=3, reg=L2)
    r1 = svrg_run(data, RunConfig(option="I", **base))
    r2 = svrg_run(data, RunConfig(option="II", **base))
    assert np.array_equal(r1.weights, r2.weights)


def test_option_two_is_reproducible_and_distinct():
    data = make_synthetic(10, 20, seed=2)
    base = dict(step_size=0.05, inner_steps=20, outer_loops=4, seed=3, reg=L2)
    a = svrg_run(data, RunConfig(option="II", **base))
    b = svrg_run(data, RunConfig(option="II", **base))
    c = svrg_run(data, RunConfig(option="I", **base))
    assert np.array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, c.weights)


def test_unbiased_direction_over_all_choices():
    data = make_synthetic(8, 6, seed=6)
    rng = np.random.default_rng(6)
    w_snap = rng.normal(size=data.d)
    w_cur = w_snap + 0.1 * rng.normal(size=data.d)
    z = full_gradient(data, w_snap, LossKind.LOGISTIC, L2)
    acc = np.zeros(data.d)
    for i in range(data.n):
        x = data.features[:, [i]].toarray().ravel()
        one = LabeledDataset(sp.csc_matrix(x.reshape(-1, 1)),
                             data.labels[i:i + 1])
        g_cur = full_gradient(one, w_cur, LossKind.LOGISTIC, L2)
        g_snap = full_gradient(one, w_snap, LossKind.LOGISTIC, L2)
        acc += g_cur - g_snap + z
    mean_dir = acc / data.n
    target = full_gradient(data, w_cur, LossKind.LOGISTIC, L2)
    assert np.max(np.abs(mean_dir - target)) < 1e-12


def test_same_stream_same_trajectory():
    data = make_synthetic(15, 25, seed=8)
    cfg = RunConfig(step_size=0.05, inner_steps=25, outer_loops=4, seed=11, reg=L2)
    a = svrg_run(data, cfg, stream=IndexStream(11))
    b = svrg_run(data, cfg, stream=IndexStream(11))
    assert np.array_equal(a.weights, b.weights)


def test_trace_shape_and_counters():
    data = make_synthetic(10, 20, seed=3)
    cfg = RunConfig(step_size=0.05, inner_steps=10, outer_loops=6, seed=0, reg=L2)
    res = svrg_run(data, cfg)
    assert len(res.trace) == 7
    assert [r.t for r in res.trace] == list(range(7))
    assert all(r.comm_scalars == 0 for r in res.trace)
    assert res.grad_evals.full == 6 * data.n
    assert res.grad_evals.inner == 6 * 10


def test_batch_mode_rounds_up_to_whole_batches():
    data = make_synthetic(10, 20, seed=3)
    cfg = RunConfig(step_size=0.05, inner_steps=10, outer_loops=2, batch_size=4,
                    seed=0, reg=L2)
    assert cfg.n_batches == 3 and cfg.effective_inner_steps == 12
    res = svrg_run(data, cfg)
    assert res.grad_evals.inner == 2 * 12


def test_divergence_raises():
    data = make_synthetic(10, 20, seed=3)
    cfg = RunConfig(step_size=1e6, inner_steps=20, outer_loops=50, seed=0,
                    reg=Regularizer(RegKind.L2, 10.0))
    with pytest.raises(DivergenceError):
        svrg_run(data, cfg)


def test_gap_monotone_and_linear_convergence():
    data = well_conditioned(seed=12)
    reg = Regularizer(RegKind.L2, 0.5)
    w_star = solve_reference(data, LossKind.LOGISTIC, reg, step_size=0.05,
                             grad_tol=1e-13)
    f_star = full_objective(data, w_star, LossKind.LOGISTIC, reg)
    cfg = RunConfig(step_size=0.05, inner_steps=data.n, outer_loops=40,
                    seed=1, reg=reg)
    res = svrg_run(data, cfg, w_star_objective=f_star)
    gaps = np.array([r.gap for r in res.trace])
    assert gaps[-1] <= 1e-10
    assert np.all(np.diff(gaps) <= 1e-14)
    mask = (gaps >= 1e-10) & (gaps <= 1e-1)
    t = np.arange(len(gaps))[mask]
    y = np.log(gaps[mask])
    assert t.size >= 5
    r = np.corrcoef(t, y)[0, 1]
    assert r * r > 0.99


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        RunConfig(step_size=-0.1, inner_steps=1, outer_loops=1)
    with pytest.raises(ValueError):
        RunConfig(step_size=0.1, inner_steps=0, outer_loops=1)
    with pytest.raises(ValueError):
        RunConfig(step_size=0.1, inner_steps=1, outer_loops=1, option="III")


def test_index_stream_replay():
    a = IndexStream(42)
    b = IndexStream(42)
    assert [a.draw(100) for _ in range(50)] == [b.draw(100) for _ in range(50)]
    assert all(0 <= i < 7 for i in IndexStream(1).draw_batch(7, 200))
