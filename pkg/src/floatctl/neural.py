"""Small numpy MLP stack: tanh networks, reverse-mode gradients, Adam,
running input statistics and a diagonal-Gaussian policy head."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


class Mlp:
    """Fully connected net, tanh on hidden layers, identity on the output.

    Weights are stored as ``(fan_in, fan_out)`` so a batch ``x`` of shape
    ``(B, fan_in)`` maps through ``x @ W + b``.
    """

    def __init__(self, layer_sizes, rng=None, output_scale=1.0):
        self.layer_sizes = [int(s) for s in layer_sizes]
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least an input and an output size")
        rng = np.random.default_rng(rng)
        self.weights, self.biases = [], []
        n_layers = len(self.layer_sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.layer_sizes[:-1], self.layer_sizes[1:])):
            limit = np.sqrt(3.0 / fan_in)
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            if i == n_layers - 1:
                w *= output_scale
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self):
        """Flat list of parameter arrays: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def set_params(self, arrays):
        arrays = list(arrays)
        for i in range(len(self.weights)):
            w, b = arrays[2 * i], arrays[2 * i + 1]
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ValueError("parameter shape mismatch")
            self.weights[i] = np.array(w, dtype=float)
            self.biases[i] = np.array(b, dtype=float)

    def copy(self) -> "Mlp":
        new = Mlp.__new__(Mlp)
        new.layer_sizes = list(self.layer_sizes)
        new.weights = [w.copy() for w in self.weights]
        new.biases = [b.copy() for b in self.biases]
        return new

    def forward(self, x):
        """Returns ``(output, cache)``; ``x`` may be a single vector or a batch."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[-1] != self.layer_sizes[0]:
            raise ValueError(f"expected input of size {self.layer_sizes[0]}, got {h.shape[-1]}")
        acts = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.tanh(z)
            acts.append(h)
        out = h[0] if single else h
        return out, {"acts": acts, "single": single}

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, output_gradient):
        """Gradients of ``sum(output * output_gradient)`` w.r.t. every parameter,
        in the same order as :attr:`params`."""
        if cache is None or "acts" not in cache:
            raise ValueError("backward needs the cache from a matching forward call")
        acts = cache["acts"]
        g = np.asarray(output_gradient, dtype=float)
        if cache["single"]:
            g = g[None, :]
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                g = g * (1.0 - acts[i + 1] ** 2)
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i:
                g = g @ self.weights[i].T
        return grads


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr, **kw) -> "AdamState":
        return cls(lr=lr, m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], **kw)


def adam_step(params, grads, state: AdamState, direction: str = "descent"):
    """Bias-corrected Adam update applied in place; returns ``(params, state)``.

    ``direction="ascent"`` climbs the gradient (policy objective),
    ``"descent"`` follows its negative (value loss).
    """
    if direction not in ("ascent", "descent"):
        raise ValueError("direction must be 'ascent' or 'descent'")
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise FloatingPointError("non-finite gradient; update rejected")
    sign = 1.0 if direction == "ascent" else -1.0
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p += sign * state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class RunningNormalizer:
    """Streaming per-dimension mean and variance (parallel-merge form)."""

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    @property
    def var(self):
        return self.m2 / self.count if self.count else np.zeros(self.dim)

    @property
    def std(self):
        return np.sqrt(self.var)

    def update(self, samples) -> "RunningNormalizer":
        x = np.asarray(samples, dtype=float).reshape(-1, self.dim)
        n_b = len(x)
        if n_b == 0:
            return self
        mean_b = x.mean(axis=0)
        m2_b = ((x - mean_b) ** 2).sum(axis=0)
        n = self.count + n_b
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (n_b / n)
        self.m2 = self.m2 + m2_b + delta * delta * (self.count * n_b / n)
        self.count = n
        return self

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if self.count == 0:
            return x.copy()
        return (x - self.mean) / np.maximum(self.std, 1e-8)

    def copy(self) -> "RunningNormalizer":
        new = RunningNormalizer(self.dim)
        new.count, new.mean, new.m2 = self.count, self.mean.copy(), self.m2.copy()
        return new


class GaussianPolicy:
    """Diagonal Gaussian over normalized actions; the mean comes from an MLP,
    the log standard deviations are a free global vector."""

    def __init__(self, mean_net: Mlp, log_std):
        self.mean_net = mean_net
        self.log_std = np.array(log_std, dtype=float)

    @property
    def params(self):
        return self.mean_net.params + [self.log_std]

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.mean_net.copy(), self.log_std.copy())

    def mean(self, obs):
        return self.mean_net(obs)

    def sample(self, obs, rng):
        """Returns ``(action, log_prob)``; the action is not clipped."""
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        mu = self.mean(obs)
        noise = rng.standard_normal(np.shape(mu))
        action = mu + np.exp(self.log_std) * noise
        return action, self._log_density(action, mu)

    def log_prob(self, obs, action):
        return self._log_density(np.asarray(action, dtype=float), self.mean(obs))

    def _log_density(self, action, mu):
        z = (action - mu) * np.exp(-self.log_std)
        return -0.5 * np.sum(z * z + 2.0 * self.log_std + LOG_2PI, axis=-1)


def gaussian_kl(mu_p, log_std_p, mu_q, log_std_q):
    """KL(p || q) for diagonal Gaussians, summed over the last axis."""
    var_p = np.exp(2.0 * log_std_p)
    var_q = np.exp(2.0 * log_std_q)
    return np.sum(log_std_q - log_std_p + (var_p + (mu_p - mu_q) ** 2) / (2.0 * var_q) - 0.5,
                  axis=-1)


def policy_kl(p_new: GaussianPolicy, p_old: GaussianPolicy, obs_batch) -> float:
    """Batch mean of KL(new || old)."""
    obs_batch = np.atleast_2d(obs_batch)
    kl = gaussian_kl(p_new.mean(obs_batch), p_new.log_std, p_old.mean(obs_batch), p_old.log_std)
    return float(np.mean(kl))
