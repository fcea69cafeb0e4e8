import math

import numpy as np
import pytest

from poisonlab import Dataset, LossSpec, ModelParams, TrainConfig
from poisonlab import avg_loss, grad_point, hvp, inverse_hvp_cg, loss_point, synth_gaussians, train, train_sgd_single_pass
from poisonlab.models import test_error_01 as zero_one_error
from poisonlab.models import (
    UnsupportedLossError,
    d2loss_dmargin2,
    loss_of_margin,
    model_from_json,
    model_to_json,
    objective_value,
    train_with_duals,
)


def test_hinge_loss_values():
    th = ModelParams(np.array([1.0, 0.0]))
    assert loss_point(LossSpec.hinge(), th, np.array([0.5, 0.0]), 1.0) == 0.5
    th2 = ModelParams(np.array([2.0, 0.0]))
    assert loss_point(LossSpec.hinge(), th2, np.array([1.0, 0.0]), 1.0) == 0.0


def test_smoothed_hinge_at_margin_one():
    # delta*ln 2 at margin exactly 1, converging to the hinge value as delta->0
    th = ModelParams(np.array([1.0]))
    x = np.array([1.0])
    v = loss_point(LossSpec.smoothed_hinge(0.1), th, x, 1.0)
    assert v == pytest.approx(0.1 * math.log(2.0), abs=1e-12)
    for delta in (1e-2, 1e-4):
        sm = loss_point(LossSpec.smoothed_hinge(delta), th, np.array([0.3]), 1.0)
        assert sm == pytest.approx(0.7, abs=3 * delta)


def test_hinge_subgradient_cases():
    th = ModelParams(np.zeros(2))
    np.testing.assert_array_equal(
        grad_point(LossSpec.hinge(), th, np.array([1.0, 2.0]), 1.0), [-1.0, -2.0])
    th3 = ModelParams(np.array([3.0, 0.0]))
    np.testing.assert_array_equal(
        grad_point(LossSpec.hinge(), th3, np.array([1.0, 0.0]), 1.0), [0.0, 0.0])
    # margin exactly 1 resolves to -yx
    th1 = ModelParams(np.array([1.0, 0.0]))
    np.testing.assert_array_equal(
        grad_point(LossSpec.hinge(), th1, np.array([1.0, 0.0]), 1.0), [-1.0, 0.0])


def test_logistic_gradient_at_zero():
    th = ModelParams(np.zeros(2))
    x = np.array([2.0, -1.0])
    np.testing.assert_allclose(
        grad_point(LossSpec.logistic(), th, x, 1.0), -x / 2.0, atol=1e-15)


@pytest.mark.parametrize("loss", [LossSpec.smoothed_hinge(0.05), LossSpec.logistic()])
def test_grad_matches_finite_differences(rng, loss):
    # central differences of loss_point as the oracle
    for _ in range(5):
        th = ModelParams(rng.standard_normal(4))
        x = rng.standard_normal(4)
        y = rng.choice([-1.0, 1.0])
        g = grad_point(loss, th, x, y)
        h = 1e-6
        fd = np.empty(4)
        for i in range(4):
            e = np.zeros(4); e[i] = h
            fd[i] = (loss_point(loss, ModelParams(th.theta + e), x, y)
                     - loss_point(loss, ModelParams(th.theta - e), x, y)) / (2 * h)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)


def test_train_single_point_stationary():
    # oracle: 1-D grid search over theta1 of the sum objective
    D = Dataset.from_points([[1.0, 0.0]], [1.0])
    cfg = TrainConfig(lam=1.0, objective="sum")
    theta = train(D, LossSpec.hinge(), cfg).theta
    grid = np.linspace(0.0, 2.0, 20001)
    vals = 0.5 * grid ** 2 + np.maximum(0.0, 1.0 - grid)
    best = grid[np.argmin(vals)]
    assert theta[0] == pytest.approx(best, abs=1e-4)
    assert abs(theta[1]) < 1e-10


def test_train_symmetric_data_halved():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((20, 3))
    Dfull = Dataset.from_points(np.vstack([X, -X]),
                                np.concatenate([np.ones(20), -np.ones(20)]))
    Dhalf = Dataset.from_points(X, np.ones(20), 2.0 * np.ones(20))
    cfg = TrainConfig(lam=0.3, objective="sum")
    t1 = train(Dfull, LossSpec.hinge(), cfg).theta
    t2 = train(Dhalf, LossSpec.hinge(), cfg).theta
    np.testing.assert_allclose(t1, t2, atol=1e-7)


def test_train_large_lambda_shrinks_theta():
    tr, _ = synth_gaussians(5, 100, 4, 3.0)
    lam = 1e6
    theta = train(tr, LossSpec.hinge(), TrainConfig(lam=lam)).theta
    # first-order bound: lam*theta = mean of active -y*x terms
    bound = np.linalg.norm(tr.X, axis=1).max() / lam
    assert np.linalg.norm(theta) <= bound * 1.01


@pytest.mark.parametrize("loss", [LossSpec.hinge(), LossSpec.logistic()])
def test_train_is_local_minimum(rng, loss):
    tr, _ = synth_gaussians(2, 80, 5, 3.0)
    cfg = TrainConfig(lam=0.2)
    theta = train(tr, loss, cfg).theta
    f0 = objective_value(theta, tr, loss, 0.2, "mean")
    for _ in range(100):
        z = rng.standard_normal(5)
        z *= 1e-2 / np.linalg.norm(z)
        assert objective_value(theta + z, tr, loss, 0.2, "mean") >= f0 - 1e-12


def test_mean_equals_sum_with_scaled_lambda():
    tr, _ = synth_gaussians(8, 60, 3, 3.0)
    t_mean = train(tr, LossSpec.hinge(), TrainConfig(lam=0.1, objective="mean")).theta
    t_sum = train(tr, LossSpec.hinge(),
                  TrainConfig(lam=0.1 * tr.total_weight, objective="sum")).theta
    np.testing.assert_allclose(t_mean, t_sum, atol=1e-8)


def test_sgd_pure_decay_matches_recurrence():
    # all margins stay > 1: gradient is lambda*theta only
    D = Dataset.from_points([[1e-6], [1e-6]], [1, -1])
    cfg = TrainConfig(lam=1.0, eta0=0.1, seed=3)
    theta = train_sgd_single_pass(D, LossSpec.hinge(), cfg).theta
    # theta starts at 0 and every per-point gradient fires (margin 0 < 1);
    # replay the recurrence as the oracle
    rng = np.random.Generator(np.random.Philox(3))
    order = rng.permutation(2)
    th = np.zeros(1)
    for t, i in enumerate(order, start=1):
        eta = 0.1 / (1.0 * t)
        m = D.y[i] * np.dot(D.X[i], th)
        coeff = (-1.0 if m <= 1.0 else 0.0) * D.y[i]
        th = (1.0 - eta) * th - eta * coeff * D.X[i]
    np.testing.assert_allclose(theta, th, atol=1e-15)


def test_sgd_deterministic_given_seed():
    tr, _ = synth_gaussians(4, 200, 3, 3.0)
    cfg = TrainConfig(lam=0.1, eta0=0.1, seed=11)
    a = train_sgd_single_pass(tr, LossSpec.hinge(), cfg).theta
    b = train_sgd_single_pass(tr, LossSpec.hinge(), cfg).theta
    np.testing.assert_array_equal(a, b)


def test_sgd_close_to_batch_on_big_synth():
    tr, te = synth_gaussians(21, 5000, 10, 3.0)
    cfg = TrainConfig(lam=0.05, eta0=0.1, seed=0)
    e_sgd = zero_one_error(train_sgd_single_pass(tr, LossSpec.hinge(), cfg), te)
    e_batch = zero_one_error(train(tr, LossSpec.hinge(), cfg), te)
    assert abs(e_sgd - e_batch) <= 0.03


def test_error_01_cases():
    th = ModelParams(np.array([1.0, 0.0]))
    D = Dataset.from_points([[1.0, 0.0], [1.0, 0.0]], [1, -1])
    assert zero_one_error(th, D) == 0.5
    D_ok = Dataset.from_points([[1.0, 0.0], [-1.0, 0.0]], [1, -1])
    assert zero_one_error(th, D_ok) == 0.0
    D_w = Dataset.from_points([[1.0, 0.0], [1.0, 0.0]], [-1, 1], [3.0, 1.0])
    assert zero_one_error(th, D_w) == 0.75


def test_error_sign_zero_counts_for_both_labels():
    th = ModelParams(np.array([1.0, 0.0]))
    D = Dataset.from_points([[0.0, 1.0], [0.0, 1.0]], [1, -1])
    assert zero_one_error(th, D) == 1.0


def test_avg_loss_cases():
    th = ModelParams(np.array([1.0, 0.0]))
    one = Dataset.from_points([[0.5, 0.0]], [1])
    assert avg_loss(th, one, LossSpec.hinge()) == loss_point(
        LossSpec.hinge(), th, np.array([0.5, 0.0]), 1.0)
    far = Dataset.from_points([[5.0, 0.0], [-4.0, 0.0]], [1, -1])
    assert avg_loss(th, far, LossSpec.hinge()) == 0.0
    D = Dataset.from_points([[0.5, 0.0], [0.2, 0.0]], [1, 1], [1.0, 2.0])
    D2 = D.with_weights(D.w * 7.0)
    assert avg_loss(th, D, LossSpec.hinge()) == pytest.approx(
        avg_loss(th, D2, LossSpec.hinge()))
    with pytest.raises(ValueError):
        avg_loss(th, Dataset.empty(2), LossSpec.hinge())


def test_hvp_far_from_margin_is_lambda_v(rng):
    # smoothed hinge with small delta: no curvature far from the margin
    tr = Dataset.from_points([[10.0, 0.0], [-10.0, 0.0]], [1, -1])
    th = ModelParams(np.array([1.0, 0.0]))
    v = rng.standard_normal(2)
    out = hvp(th, tr, 0.3, v, LossSpec.smoothed_hinge(0.01))
    np.testing.assert_allclose(out, 0.3 * v, atol=1e-12)


def test_hvp_zero_vector():
    tr, _ = synth_gaussians(1, 20, 3, 2.0)
    th = ModelParams(np.ones(3))
    np.testing.assert_array_equal(
        hvp(th, tr, 0.1, np.zeros(3), LossSpec.logistic()), np.zeros(3))


def test_hvp_matches_dense_hessian(rng):
    tr, _ = synth_gaussians(6, 20, 5, 2.0)
    th = ModelParams(rng.standard_normal(5))
    loss = LossSpec.smoothed_hinge(0.1)
    lam = 0.2
    curv = tr.w * d2loss_dmargin2(loss, tr.y * (tr.X @ th.theta)) / tr.total_weight
    H = lam * np.eye(5) + (tr.X.T * curv) @ tr.X
    for _ in range(5):
        v = rng.standard_normal(5)
        np.testing.assert_allclose(hvp(th, tr, lam, v, loss), H @ v, atol=1e-10)


def test_hvp_rejects_hinge():
    tr, _ = synth_gaussians(1, 10, 2, 2.0)
    with pytest.raises(UnsupportedLossError):
        hvp(ModelParams(np.ones(2)), tr, 0.1, np.ones(2), LossSpec.hinge())


def test_hvp_linear_in_v(rng):
    tr, _ = synth_gaussians(9, 30, 4, 2.0)
    th = ModelParams(rng.standard_normal(4))
    loss = LossSpec.logistic()
    v1, v2 = rng.standard_normal(4), rng.standard_normal(4)
    a = 1.7
    lhs = hvp(th, tr, 0.1, a * v1 + v2, loss)
    rhs = a * hvp(th, tr, 0.1, v1, loss) + hvp(th, tr, 0.1, v2, loss)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_inverse_hvp_identity_case(rng):
    tr = Dataset.from_points([[10.0, 0.0], [-10.0, 0.0]], [1, -1])
    th = ModelParams(np.array([1.0, 0.0]))
    v = rng.standard_normal(2)
    u = inverse_hvp_cg(th, tr, 0.5, v, LossSpec.smoothed_hinge(0.01))
    np.testing.assert_allclose(u, v / 0.5, atol=1e-9)


def test_inverse_hvp_zero():
    tr, _ = synth_gaussians(1, 10, 3, 2.0)
    th = ModelParams(np.ones(3))
    np.testing.assert_array_equal(
        inverse_hvp_cg(th, tr, 0.1, np.zeros(3), LossSpec.logistic()), np.zeros(3))


def test_inverse_hvp_matches_dense_solve(rng):
    tr, _ = synth_gaussians(17, 40, 5, 2.0)
    th = ModelParams(rng.standard_normal(5))
    loss = LossSpec.logistic()
    lam = 0.15
    curv = tr.w * d2loss_dmargin2(loss, tr.y * (tr.X @ th.theta)) / tr.total_weight
    H = lam * np.eye(5) + (tr.X.T * curv) @ tr.X
    v = rng.standard_normal(5)
    u = inverse_hvp_cg(th, tr, lam, v, loss, tol=1e-12)
    np.testing.assert_allclose(u, np.linalg.solve(H, v), atol=1e-8)


def test_hinge_duals_lie_in_unit_interval():
    tr, _ = synth_gaussians(3, 100, 4, 3.0)
    _, gamma = train_with_duals(tr, LossSpec.hinge(), TrainConfig(lam=0.1))
    assert np.all(gamma >= 0.0) and np.all(gamma <= 1.0)


def test_model_json_round_trip():
    th = ModelParams(np.array([0.25, -1.5]))
    text = model_to_json(th, LossSpec.smoothed_hinge(0.02), 0.4)
    th2, loss2, lam2 = model_from_json(text)
    np.testing.assert_array_equal(th.theta, th2.theta)
    assert loss2.kind == "smoothed_hinge" and loss2.delta == 0.02 and lam2 == 0.4
