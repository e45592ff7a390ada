import math

import numpy as np
import pytest

from floatctl import mpc
from floatctl.dynamics import PlatformParams, rk4_array
from floatctl.verify import mpc_lstsq_oracle

P = PlatformParams()
W = mpc.MpcWeights()


def _model(x0, step=0.1):
    return mpc.discretize(mpc.linearize(x0, P), step)


def test_discretization_matches_integration():
    """With no rate and no torque the attitude stays frozen, so the model is exact."""
    x0 = np.array([0.3, -0.2, 0.05, 0.01, 0.7, 0.0])
    u = np.array([0.4, -0.3, 0.0])
    x = x0.copy()
    for _ in range(10):
        x = rk4_array(x, u, P.mass, P.inertia, 0.01)
    model = _model(x0)
    assert np.allclose(model.Ad @ x0 + model.Bd @ u, x, atol=1e-14)
    # the torque channel alone is linear too
    u = np.array([0.0, 0.0, 0.2])
    x = x0.copy()
    for _ in range(10):
        x = rk4_array(x, u, P.mass, P.inertia, 0.01)
    assert np.allclose(model.Ad @ x0 + model.Bd @ u, x, atol=1e-14)


def test_discretize_rejects_non_double_integrator():
    m = mpc.linearize(np.zeros(6), P)
    bad = mpc.LinearModel(np.eye(6), m.B_hat, 0.0)
    with pytest.raises(mpc.MpcError):
        mpc.discretize(bad, 0.1)


def test_config_and_weight_validation():
    with pytest.raises(mpc.MpcError):
        mpc.MpcConfig(horizon=1.05).validate()
    with pytest.raises(mpc.MpcError):
        mpc.MpcWeights(omega=-np.ones(6)).validate()
    with pytest.raises(mpc.MpcError):
        mpc.MpcConfig(input_bounds=[[0.1, 1], [-1, 1], [-1, 1]]).validate()


def test_unconstrained_matches_oracle():
    cfg = mpc.MpcConfig(horizon=3.0)
    rng = np.random.default_rng(5)
    for _ in range(5):
        x0 = rng.normal(0, 0.5, 6)
        got = mpc.solve(_model(x0), x0, cfg, W, enforce_bounds=False).inputs
        ref = mpc_lstsq_oracle(x0, P, cfg, W)
        assert np.linalg.norm(got - ref) <= 1e-8 * np.linalg.norm(ref)


def test_shrinking_horizon_tail_is_optimal():
    """Re-solving from the predicted next state with one step less reproduces the tail."""
    x0 = np.array([1.0, -0.6, 0.1, 0.05, 1.2, 0.1])
    model = _model(x0)
    full = mpc.solve(model, x0, mpc.MpcConfig(horizon=5.0), W, enforce_bounds=False)
    tail = mpc.solve(model, full.predicted_states[1], mpc.MpcConfig(horizon=4.9), W,
                     enforce_bounds=False)
    assert np.allclose(tail.inputs, full.inputs[1:], rtol=1e-8, atol=1e-12)


def test_objective_is_minimized():
    x0 = np.array([0.5, 0.4, 0.0, 0.0, 0.3, 0.0])
    cfg = mpc.MpcConfig(horizon=2.0)
    model = _model(x0)
    sol = mpc.solve(model, x0, cfg, W, enforce_bounds=False)
    rng = np.random.default_rng(0)
    for _ in range(10):
        other = sol.inputs + rng.normal(0, 1e-3, sol.inputs.shape)
        assert mpc.objective(model, x0, other, cfg, W) > sol.objective


def test_target_gives_zero_input():
    target = np.array([0.5, -0.3, 0.0, 0.0, 2.0, 0.0])
    cfg = mpc.MpcConfig(target=target)
    sol = mpc.solve(_model(target), target, cfg, W)
    assert np.all(sol.inputs == 0.0)


def test_heading_error_is_wrapped():
    """A start at target angle plus 2 pi is already at the target."""
    x0 = np.array([0, 0, 0, 0, 2 * math.pi, 0.0])
    sol = mpc.solve(_model(x0), x0, mpc.MpcConfig(horizon=1.0), W)
    assert np.max(np.abs(sol.inputs)) < 1e-12


def test_input_box_is_respected():
    x0 = np.array([2.0, 1.0, 0.5, -0.4, 2.5, 1.5])
    cfg = mpc.MpcConfig()
    sol = mpc.solve(_model(x0), x0, cfg, W)
    lo, hi = cfg.input_bounds[:, 0], cfg.input_bounds[:, 1]
    assert np.all(sol.inputs >= lo - 1e-12) and np.all(sol.inputs <= hi + 1e-12)


def test_room_penalty_pulls_prediction_inside():
    x0 = np.array([2.0, 0.0, 0.3, 0.0, 0.0, 0.0])
    cfg = mpc.MpcConfig(horizon=5.0)
    free = mpc.solve(_model(x0), x0, cfg, W, enforce_bounds=False)
    bounded = mpc.solve(_model(x0), x0, cfg, W)
    assert bounded.predicted_states[:, 0].max() < free.predicted_states[:, 0].max()


def test_reference_derivative_indexing():
    x0 = np.array([0.5, 0, 0, 0, 0, 0.0])
    sol = mpc.solve(_model(x0), x0, mpc.MpcConfig(horizon=1.0), W)
    assert np.array_equal(mpc.reference_derivative(sol, 0), sol.predicted_state_derivatives[0])
    with pytest.raises(IndexError):
        mpc.reference_derivative(sol, 10)


def test_reference_generator_matches_full_solve():
    cfg = mpc.MpcConfig()
    gen = mpc.ReferenceGenerator(P, cfg, W)
    rng = np.random.default_rng(11)
    xs = np.column_stack([rng.uniform(-2.4, 2.4, 12), rng.uniform(-1.4, 1.4, 12),
                          rng.normal(0, 0.4, (12, 2)), rng.uniform(-3, 3, 12),
                          rng.normal(0, 1.5, 12)])
    fast = gen.first_derivative(xs)
    for x, f in zip(xs, fast):
        sol = mpc.solve(_model(x), x, cfg, W)
        assert np.allclose(sol.predicted_state_derivatives[0], f, atol=1e-9)


def test_reference_generator_non_separable_falls_back():
    w = mpc.MpcWeights(rho=np.diag([1000.0, 500.0, 1000.0]))
    gen = mpc.ReferenceGenerator(P, mpc.MpcConfig(horizon=2.0), w)
    assert not gen.separable
    x = np.array([[0.4, 0.2, 0.0, 0.1, 0.5, 0.05]])
    want = mpc.solve(_model(x[0]), x[0], mpc.MpcConfig(horizon=2.0), w).predicted_state_derivatives[0]
    assert np.allclose(gen.first_derivative(x)[0], want, atol=1e-12)
