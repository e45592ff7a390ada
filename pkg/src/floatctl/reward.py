"""Stabilization reward: MPC-derivative tracking, control effort and two
sigmoid terminal bonuses whose sharpness grows with episode time."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import OMEGA, POS, THETA, PlatformState, wrap_angle

MODES = ("mpc_guided", "ppo_only")
# acceleration channels of the 6-dim state derivative: vx', vy', omega'
ACCEL_CHANNELS = [2, 3, OMEGA]


@dataclass(frozen=True, eq=False)
class RewardConfig:
    deriv_weight: np.ndarray = field(default_factory=lambda: np.array([1.0, 10.0, 5.0]))
    effort_weight: np.ndarray = field(default_factory=lambda: np.array([10.0, 10.0, 10.0]))
    psi1: float = 100.0          # rotation bonus
    psi2: float = 10.0           # position bonus
    k0: float = 1.0
    k_rate: float = 0.5          # 1/s
    swap_bonus_pairing: bool = False
    out_of_bounds_penalty: float = -100.0
    mode: str = "mpc_guided"

    def __post_init__(self):
        for name in ("deriv_weight", "effort_weight"):
            w = np.array(getattr(self, name), dtype=float)
            if w.ndim == 2:
                if np.count_nonzero(w - np.diag(np.diag(w))):
                    raise ValueError(f"{name} must be diagonal")
                w = np.diag(w)
            if w.shape != (3,) or np.any(w <= 0):
                raise ValueError(f"{name} needs three positive diagonal entries")
            object.__setattr__(self, name, w)
        if self.psi1 <= 0 or self.psi2 <= 0:
            raise ValueError("bonus weights must be positive")
        if self.k0 <= 0 or self.k_rate <= 0:
            raise ValueError("sharpness schedule must be positive and increasing")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def sharpness(self, t):
        return self.k0 + self.k_rate * np.asarray(t, dtype=float)


@dataclass(frozen=True)
class StabilizationErrors:
    sigma: float   # position error, m
    delta: float   # attitude error, rad


def stabilization_errors(state: PlatformState, target: PlatformState) -> StabilizationErrors:
    sigma, delta = errors_array(state.as_array(), target.as_array())
    return StabilizationErrors(float(sigma), float(delta))


def errors_array(x, target):
    """Batched (sigma, delta) for states ``x`` (..., 6)."""
    x = np.asarray(x, dtype=float)
    target = np.asarray(target, dtype=float)
    sigma = np.linalg.norm(x[..., POS] - target[POS], axis=-1)
    delta = np.abs(wrap_angle(x[..., THETA] - target[THETA]))
    return sigma, delta


def _sigmoid_bonus(psi, k, err):
    # psi / (1 + e^(k err)) written to stay finite for large k err
    z = np.asarray(k * err, dtype=float)
    e = np.exp(-np.abs(z))
    return np.where(z > 0, psi * e / (1.0 + e), psi / (1.0 + e))


def reward_terms(achieved_deriv, reference_deriv, action, sigma, delta, t, cfg: RewardConfig):
    """The four additive terms (tracking, effort, rotation bonus, position bonus).

    Derivatives are the three acceleration channels (vx', vy', omega');
    ``action`` is in normalized units.  Everything broadcasts over leading axes.
    """
    diff = np.asarray(achieved_deriv, dtype=float) - np.asarray(reference_deriv, dtype=float)
    a = np.asarray(action, dtype=float)
    tracking = -np.sum(cfg.deriv_weight * diff * diff, axis=-1)
    effort = -np.sum(cfg.effort_weight * a * a, axis=-1)
    k = cfg.sharpness(t)
    rot_err, pos_err = (sigma, delta) if cfg.swap_bonus_pairing else (delta, sigma)
    bonus_rot = _sigmoid_bonus(cfg.psi1, k, rot_err)
    bonus_pos = _sigmoid_bonus(cfg.psi2, k, pos_err)
    return tracking, effort, bonus_rot, bonus_pos


def reward(achieved_deriv, reference_deriv, action, errors: StabilizationErrors, t: float,
           cfg: RewardConfig):
    """Scalar reward.  In ``ppo_only`` mode the reference is forced to zero."""
    if cfg.mode == "ppo_only":
        reference_deriv = np.zeros(3)
    terms = reward_terms(achieved_deriv, reference_deriv, action, errors.sigma, errors.delta,
                         t, cfg)
    return float(sum(terms))


def terminal_bonus_profile(errors: StabilizationErrors, t_grid, cfg: RewardConfig) -> np.ndarray:
    """Sum of the two bonus terms over a time grid at fixed errors."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("time grid must be increasing")
    _, _, b_rot, b_pos = reward_terms(np.zeros(3), np.zeros(3), np.zeros(3),
                                      errors.sigma, errors.delta, t_grid, cfg)
    return b_rot + b_pos


def hold_value(sigma, delta, t_end, t_limit, dt, gamma, cfg: RewardConfig):
    """Reward still to come if the platform simply holds its stabilized state
    from ``t_end`` until the time limit: zero action, zero derivative mismatch,
    errors frozen.  Returns ``(discounted, undiscounted)`` sums."""
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    t_end = np.atleast_1d(np.asarray(t_end, dtype=float))
    n_max = int(round(t_limit / dt))
    steps = np.arange(1, n_max + 1)
    t = t_end[:, None] + steps[None, :] * dt
    valid = t <= t_limit + 1e-9
    _, _, b_rot, b_pos = reward_terms(np.zeros(3), np.zeros(3), np.zeros(3),
                                      sigma[:, None], delta[:, None], t, cfg)
    per_step = np.where(valid, b_rot + b_pos, 0.0)
    disc = np.sum(per_step * gamma ** (steps[None, :] - 1), axis=1)
    return disc, per_step.sum(axis=1)
