import numpy as np
import pytest

from floatctl import neural as nn
from floatctl.verify import _fd_grad, _rel_err


def test_forward_shapes_and_single_input():
    net = nn.Mlp([4, 8, 3], rng=0)
    assert net(np.zeros((5, 4))).shape == (5, 3)
    assert net(np.zeros(4)).shape == (3,)
    with pytest.raises(ValueError):
        net(np.zeros(5))
    with pytest.raises(ValueError):
        nn.Mlp([4])


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    net = nn.Mlp([3, 6, 5, 2], rng)
    x = rng.normal(size=(7, 3))
    w = rng.normal(size=(7, 2))
    _, cache = net.forward(x)
    grads = net.backward(cache, w)

    def f():
        return float(np.sum(net(x) * w))

    fd = _fd_grad(f, net.params)
    for g, n in zip(grads, fd):
        assert _rel_err(g, n) < 1e-6


def test_backward_needs_cache():
    with pytest.raises(ValueError):
        nn.Mlp([2, 2], 0).backward(None, np.zeros(2))


def test_copy_is_independent():
    net = nn.Mlp([2, 3, 1], 0)
    c = net.copy()
    c.weights[0] += 1
    assert not np.array_equal(c.weights[0], net.weights[0])
    with pytest.raises(ValueError):
        net.set_params([np.zeros((3, 3))] * 4)


def test_adam_first_step_size_is_lr():
    p = [np.array([1.0, -2.0])]
    st = nn.AdamState.for_params(p, lr=0.1)
    nn.adam_step(p, [np.array([3.0, -0.5])], st, "descent")
    assert np.allclose(p[0], [0.9, -1.9], atol=1e-6)
    nn.adam_step(p, [np.array([3.0, -0.5])], st, "ascent")
    assert st.step == 2
    with pytest.raises(FloatingPointError):
        nn.adam_step(p, [np.array([np.nan, 0.0])], st)
    with pytest.raises(ValueError):
        nn.adam_step(p, [np.zeros(3)], st)


def test_adam_minimizes_quadratic():
    p = [np.array([5.0, -3.0])]
    st = nn.AdamState.for_params(p, lr=0.05)
    for _ in range(2000):
        nn.adam_step(p, [2 * p[0]], st)
    assert np.max(np.abs(p[0])) < 1e-2


def test_running_normalizer_matches_batch_statistics():
    rng = np.random.default_rng(2)
    data = rng.normal(3, 2, size=(1000, 4))
    norm = nn.RunningNormalizer(4)
    for chunk in np.array_split(data, 7):
        norm.update(chunk)
    assert np.allclose(norm.mean, data.mean(0)) and np.allclose(norm.var, data.var(0))
    z = norm.apply(data)
    assert np.allclose(z.mean(0), 0, atol=1e-12) and np.allclose(z.std(0), 1)
    assert np.array_equal(nn.RunningNormalizer(2).apply(np.ones(2)), np.ones(2))


def test_policy_log_prob_matches_closed_form():
    pol = nn.GaussianPolicy(nn.Mlp([2, 4, 2], 0), np.log([0.5, 2.0]))
    obs = np.array([[0.1, 0.2]])
    a, lp = pol.sample(obs, np.random.default_rng(0))
    mu = pol.mean(obs)
    sd = np.array([0.5, 2.0])
    want = np.sum(-0.5 * ((a - mu) / sd) ** 2 - np.log(sd) - 0.5 * np.log(2 * np.pi), axis=-1)
    assert np.allclose(lp, want) and np.allclose(pol.log_prob(obs, a), want)


def test_kl_properties():
    mu = np.array([0.1, -0.2])
    ls = np.log([0.3, 0.7])
    assert nn.gaussian_kl(mu, ls, mu, ls) == 0.0
    assert nn.gaussian_kl(mu, ls, mu + 0.1, ls) == pytest.approx(0.5 * np.sum(0.01 / np.exp(2 * ls)))
    pol = nn.GaussianPolicy(nn.Mlp([2, 3, 2], 0), ls)
    assert nn.policy_kl(pol, pol.copy(), np.zeros((4, 2))) == 0.0


def test_log_prob_at_mean_and_sample_mean():
    sd = np.array([0.3, 1.2, 0.7])
    pol = nn.GaussianPolicy(nn.Mlp([2, 4, 3], 1), np.log(sd))
    obs = np.array([0.5, -0.5])
    mu = pol.mean(obs)
    assert pol.log_prob(obs, mu) == pytest.approx(-0.5 * np.sum(np.log(2 * np.pi * sd ** 2)))
    acts, _ = pol.sample(np.tile(obs, (100_000, 1)), np.random.default_rng(3))
    se = sd / np.sqrt(100_000)
    assert np.all(np.abs(acts.mean(0) - mu) < 3 * se)
    a1, _ = pol.sample(obs, np.random.default_rng(9))
    a2, _ = pol.sample(obs, np.random.default_rng(9))
    assert np.array_equal(a1, a2)
