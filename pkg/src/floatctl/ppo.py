"""Proximal policy optimization with Monte-Carlo advantages and KL-adaptive
clip range / actor learning rate."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .neural import AdamState, GaussianPolicy, Mlp, RunningNormalizer, adam_step, policy_kl


@dataclass
class PpoConfig:
    gamma: float = 0.98
    clip_epsilon: float = 0.2          # initial value; adapted during training
    target_kl: float = 0.001
    actor_lr: float = 3e-4             # initial value; adapted during training
    critic_lr: float = 1e-3
    epochs: int = 10
    minibatch_size: int = 4096
    batch_episodes: int = 200
    max_episodes: int = 20000
    max_updates: int | None = None
    normalize_advantages: bool = True
    # adaptation rule
    kl_high: float = 2.0               # multiples of target_kl
    kl_low: float = 0.5
    lr_factor: float = 1.5
    epsilon_factor: float = 1.2
    epsilon_min: float = 0.05
    epsilon_max: float = 0.4
    lr_min: float = 1e-6
    lr_max: float = 1e-2

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip epsilon must lie in (0, 1)")
        if self.target_kl <= 0:
            raise ValueError("target KL must be positive")
        if self.epochs < 1 or self.minibatch_size < 1 or self.batch_episodes < 1:
            raise ValueError("epochs, minibatch size and batch size must be positive")


@dataclass
class Transition:
    observation: np.ndarray
    action: np.ndarray
    reward: float
    old_log_prob: float
    value_estimate: float
    done: bool


@dataclass
class TrajectoryBatch:
    """Transitions of complete episodes stored back to back.

    ``episode_starts`` holds the first row of each episode; episodes with no
    transitions are allowed (they started inside the success region).
    ``terminal_values`` is the discounted value credited after the last
    transition of each episode (zero for time-outs and room exits).
    """

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    old_log_probs: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    episode_starts: np.ndarray
    terminal_values: np.ndarray = None
    returns: np.ndarray = field(default=None)
    advantages: np.ndarray = field(default=None)

    def __post_init__(self):
        n_ep = len(self.episode_starts)
        if self.terminal_values is None:
            self.terminal_values = np.zeros(n_ep)

    @classmethod
    def from_transitions(cls, episodes) -> "TrajectoryBatch":
        """Build from a list of episodes, each a list of :class:`Transition`."""
        rows = [t for ep in episodes for t in ep]
        starts = np.cumsum([0] + [len(ep) for ep in episodes[:-1]])
        return cls(
            observations=np.array([t.observation for t in rows], dtype=float),
            actions=np.array([t.action for t in rows], dtype=float),
            rewards=np.array([t.reward for t in rows], dtype=float),
            old_log_probs=np.array([t.old_log_prob for t in rows], dtype=float),
            values=np.array([t.value_estimate for t in rows], dtype=float),
            dones=np.array([t.done for t in rows], dtype=bool),
            episode_starts=np.asarray(starts, dtype=int),
        )

    def __len__(self):
        return len(self.rewards)

    @property
    def n_episodes(self) -> int:
        return len(self.episode_starts)

    def episode_slices(self):
        ends = list(self.episode_starts[1:]) + [len(self)]
        return [slice(s, e) for s, e in zip(self.episode_starts, ends)]

    def compute_returns(self, gamma: float) -> np.ndarray:
        out = np.empty(len(self))
        for sl, tail in zip(self.episode_slices(), self.terminal_values):
            out[sl] = discounted_returns(self.rewards[sl], gamma, tail)
        self.returns = out
        return out


def discounted_return(rewards, gamma: float, from_step: int = 0) -> float:
    """sum_{k>=t} gamma^(k-t) r_k by backward recursion."""
    rewards = np.asarray(rewards, dtype=float)
    if not 0 <= from_step < len(rewards):
        raise IndexError("from_step outside the episode")
    acc = 0.0
    for r in rewards[from_step:][::-1]:
        acc = r + gamma * acc
    return float(acc)


def discounted_returns(rewards, gamma: float, bootstrap: float = 0.0) -> np.ndarray:
    """Return-to-go at every step; ``bootstrap`` is the discounted value after the end."""
    rewards = np.asarray(rewards, dtype=float)
    out = np.empty_like(rewards)
    acc = float(bootstrap)
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def advantages(returns, values) -> np.ndarray:
    """Empirical return minus the critic's estimate recorded at collection time."""
    return np.asarray(returns, dtype=float) - np.asarray(values, dtype=float)


def normalize(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    std = x.std()
    return (x - x.mean()) / (std if std > 1e-12 else 1.0)


def clip_ratio(p, epsilon: float):
    return np.clip(p, 1.0 - epsilon, 1.0 + epsilon)


def surrogate_objective(policy: GaussianPolicy, obs, actions, old_log_probs, adv, epsilon):
    """Clipped surrogate and its gradient w.r.t. ``policy.params``.

    Gradient flows only where the unclipped term is the one picked by the min.
    """
    obs = np.atleast_2d(obs)
    actions = np.atleast_2d(actions)
    mu, cache = policy.mean_net.forward(obs)
    inv_var = np.exp(-2.0 * policy.log_std)
    diff = actions - mu
    logp = -0.5 * np.sum(diff * diff * inv_var + 2.0 * policy.log_std + np.log(2 * np.pi), axis=1)
    ratio = np.exp(logp - old_log_probs)
    unclipped = ratio * adv
    clipped = clip_ratio(ratio, epsilon) * adv
    obj = float(np.mean(np.minimum(unclipped, clipped)))

    active = unclipped <= clipped
    coef = np.where(active, ratio * adv, 0.0) / len(adv)      # d obj / d logp
    g_mu = coef[:, None] * diff * inv_var
    grads = policy.mean_net.backward(cache, g_mu)
    g_log_std = np.sum(coef[:, None] * (diff * diff * inv_var - 1.0), axis=0)
    return obj, grads + [g_log_std]


class ValueFunction:
    """Critic ``V(x) = offset + scale * net(x)``.

    ``offset``/``scale`` track the running return statistics so the network
    itself works on unit-scale targets.
    """

    def __init__(self, net: Mlp, offset: float = 0.0, scale: float = 1.0):
        self.net = net
        self.offset = float(offset)
        self.scale = float(scale)

    @property
    def params(self):
        return self.net.params

    def copy(self) -> "ValueFunction":
        return ValueFunction(self.net.copy(), self.offset, self.scale)

    def __call__(self, obs):
        out = self.net(np.atleast_2d(obs))[:, 0]
        return self.offset + self.scale * out


def value_objective(critic: ValueFunction, obs, returns):
    """Half mean squared error and its gradient w.r.t. ``critic.params``."""
    obs = np.atleast_2d(obs)
    out, cache = critic.net.forward(obs)
    v = critic.offset + critic.scale * out[:, 0]
    err = v - np.asarray(returns, dtype=float)
    loss = 0.5 * float(np.mean(err * err))
    g_out = (err * critic.scale / len(err))[:, None]
    return loss, critic.net.backward(cache, g_out)


def adapt_kl(measured_kl: float, epsilon: float, actor_lr: float, cfg: PpoConfig):
    """Nudge clip range and actor step size toward the KL target band."""
    if measured_kl < 0:
        raise ValueError("KL cannot be negative")
    if measured_kl > cfg.kl_high * cfg.target_kl:
        actor_lr /= cfg.lr_factor
        epsilon = max(epsilon / cfg.epsilon_factor, cfg.epsilon_min)
    elif measured_kl < cfg.kl_low * cfg.target_kl:
        actor_lr *= cfg.lr_factor
        epsilon = min(epsilon * cfg.epsilon_factor, cfg.epsilon_max)
    return epsilon, float(np.clip(actor_lr, cfg.lr_min, cfg.lr_max))


@dataclass
class Agent:
    """Everything a learning update reads or writes."""

    policy: GaussianPolicy
    critic: ValueFunction
    obs_normalizer: RunningNormalizer
    return_normalizer: RunningNormalizer
    actor_opt: AdamState
    critic_opt: AdamState
    epsilon: float
    updates: int = 0
    episodes: int = 0

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, cfg: PpoConfig, rng,
               actor_hidden=(128, 64), critic_hidden=(128, 64, 8),
               initial_log_std: float = float(np.log(0.5))) -> "Agent":
        rng = np.random.default_rng(rng)
        actor = Mlp([obs_dim, *actor_hidden, act_dim], rng, output_scale=0.01)
        critic = Mlp([obs_dim, *critic_hidden, 1], rng)
        policy = GaussianPolicy(actor, np.full(act_dim, initial_log_std))
        value = ValueFunction(critic)
        return cls(policy, value, RunningNormalizer(obs_dim), RunningNormalizer(1),
                   AdamState.for_params(policy.params, cfg.actor_lr),
                   AdamState.for_params(value.params, cfg.critic_lr),
                   cfg.clip_epsilon)

    def snapshot(self) -> "Agent":
        def copy_opt(o: AdamState):
            return AdamState(o.lr, o.beta1, o.beta2, o.eps, o.step,
                             [m.copy() for m in o.m], [v.copy() for v in o.v])
        return Agent(self.policy.copy(), self.critic.copy(), self.obs_normalizer.copy(),
                     self.return_normalizer.copy(), copy_opt(self.actor_opt),
                     copy_opt(self.critic_opt), self.epsilon, self.updates, self.episodes)

    def restore(self, other: "Agent"):
        self.__dict__.update(other.snapshot().__dict__)


def _all_finite(arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


def update(batch: TrajectoryBatch, agent: Agent, cfg: PpoConfig, rng) -> dict:
    """One learning update on a complete batch; mutates ``agent`` and returns
    diagnostics.  On any non-finite quantity the agent is rolled back and
    FloatingPointError is raised."""
    rng = np.random.default_rng(rng)
    if len(batch) == 0:
        agent.updates += 1
        return dict(objective=0.0, value_loss=0.0, kl=0.0, epsilon=agent.epsilon,
                    actor_lr=agent.actor_opt.lr, critic_lr=agent.critic_opt.lr, transitions=0)
    backup = agent.snapshot()
    returns = batch.compute_returns(cfg.gamma) if batch.returns is None else batch.returns
    if not (np.all(np.isfinite(returns)) and np.all(np.isfinite(batch.values))):
        raise FloatingPointError("non-finite returns or value estimates; update skipped")
    adv = advantages(returns, batch.values)
    if cfg.normalize_advantages:
        adv = normalize(adv)
    batch.advantages = adv

    agent.return_normalizer.update(returns[:, None])
    agent.critic.offset = float(agent.return_normalizer.mean[0])
    agent.critic.scale = float(max(agent.return_normalizer.std[0], 1e-6))

    old_policy = agent.policy.copy()
    obs, act, old_lp = batch.observations, batch.actions, batch.old_log_probs
    n = len(batch)
    mb = min(cfg.minibatch_size, n)
    try:
        with np.errstate(over="raise", invalid="raise"):
            for _ in range(cfg.epochs):
                perm = rng.permutation(n)
                for start in range(0, n, mb):
                    idx = perm[start:start + mb]
                    _, g_pi = surrogate_objective(agent.policy, obs[idx], act[idx], old_lp[idx],
                                                  adv[idx], agent.epsilon)
                    adam_step(agent.policy.params, g_pi, agent.actor_opt, "ascent")
                    _, g_v = value_objective(agent.critic, obs[idx], returns[idx])
                    adam_step(agent.critic.params, g_v, agent.critic_opt, "descent")
            objective, _ = surrogate_objective(agent.policy, obs, act, old_lp, adv, agent.epsilon)
            value_loss, _ = value_objective(agent.critic, obs, returns)
            kl = policy_kl(agent.policy, old_policy, obs)
    except FloatingPointError:
        agent.restore(backup)
        raise
    if not (np.isfinite(objective) and np.isfinite(value_loss) and np.isfinite(kl)
            and _all_finite(agent.policy.params) and _all_finite(agent.critic.params)):
        agent.restore(backup)
        raise FloatingPointError("non-finite quantity in PPO update; parameters rolled back")

    kl = max(kl, 0.0)
    used_epsilon, used_lr = agent.epsilon, agent.actor_opt.lr
    agent.epsilon, agent.actor_opt.lr = adapt_kl(kl, agent.epsilon, agent.actor_opt.lr, cfg)
    agent.updates += 1
    return dict(objective=objective, value_loss=value_loss, kl=kl, epsilon=used_epsilon,
                actor_lr=used_lr, critic_lr=agent.critic_opt.lr, transitions=n,
                next_epsilon=agent.epsilon, next_actor_lr=agent.actor_opt.lr)
