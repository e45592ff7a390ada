"""Vectorized closed-loop simulation of many platforms in lockstep.

One control step: clamp the normalized action, scale it to the wrench box,
allocate to nozzle duties, run the PWPF modulators and RK4 over the
sub-steps, then score the step.  All arrays carry a leading batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import EpisodeConfig, RunConfig
from .dynamics import OMEGA, THETA, allocate_array, rk4_array, wrap_angle
from .mpc import ReferenceGenerator
from .pwpf import pwpf_step_array
from .reward import ACCEL_CHANNELS, errors_array, reward_terms

OBS_DIM = 7
ACT_DIM = 3


def success_mask(x, target, ep: EpisodeConfig):
    """Batched success predicate: all four tolerances at once."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    target = np.asarray(target, dtype=float)
    sigma, delta = errors_array(x, target)
    speed = np.linalg.norm(x[:, 2:4] - target[2:4], axis=1)
    rate = np.abs(x[:, OMEGA] - target[OMEGA])
    return ((sigma < ep.position_tolerance)
            & (speed <= ep.speed_tolerance)
            & (delta <= np.deg2rad(ep.angle_tolerance_deg))
            & (rate <= np.deg2rad(ep.rate_tolerance_deg)))


def out_of_room(x, target, ep: EpisodeConfig):
    x = np.atleast_2d(x)
    half = np.asarray(ep.room_half_extent)
    return np.any(np.abs(x[:, 0:2] - np.asarray(target)[0:2]) > half, axis=1)


def observe(x, target):
    """Body-frame error features: position error, velocity, heading error
    as (sin, cos), and rate."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    target = np.asarray(target, dtype=float)
    th = x[:, THETA]
    c, s = np.cos(th), np.sin(th)
    dp = x[:, 0:2] - target[0:2]
    dv = x[:, 2:4] - target[2:4]
    dth = wrap_angle(th - target[THETA])
    return np.column_stack([
        c * dp[:, 0] + s * dp[:, 1], -s * dp[:, 0] + c * dp[:, 1],
        c * dv[:, 0] + s * dv[:, 1], -s * dv[:, 0] + c * dv[:, 1],
        np.sin(dth), np.cos(dth), x[:, OMEGA] - target[OMEGA],
    ])


def sample_initial_states(n, ep: EpisodeConfig, rng):
    rng = np.random.default_rng(rng)
    px, py = ep.init_position_range
    vr = ep.init_speed_range
    wr = np.deg2rad(ep.init_rate_range_deg)
    x = np.empty((n, 6))
    x[:, 0] = rng.uniform(-px, px, n)
    x[:, 1] = rng.uniform(-py, py, n)
    x[:, 2:4] = rng.uniform(-vr, vr, (n, 2))
    x[:, THETA] = wrap_angle(rng.uniform(-np.pi, np.pi, n)) if ep.init_full_heading else 0.0
    x[:, OMEGA] = rng.uniform(-wr, wr, n)
    x += np.asarray(ep.target)
    x[:, THETA] = wrap_angle(x[:, THETA])
    return x


@dataclass
class StepResult:
    next_state: np.ndarray          # (B, 6)
    filter_value: np.ndarray        # (B, 8) modulator state after the step
    output_on: np.ndarray           # (B, 8)
    commanded_wrench: np.ndarray    # (B, 3) body frame
    realized_wrench: np.ndarray     # (B, 3) body frame, step average
    valve_open: np.ndarray          # (B, 8) open fraction of the step
    achieved: np.ndarray            # (B, 3) mean (vx', vy', omega') over the step
    reference: np.ndarray           # (B, 3)
    terms: np.ndarray               # (B, 4) tracking, effort, rotation bonus, position bonus


class PlatformEnv:
    """Shared physics and scoring; the caller owns the state arrays."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.layout = cfg.thrusters
        self.box = self.layout.box_limits
        self.target = np.asarray(cfg.episode.target, dtype=float)
        self.n_thrusters = self.layout.wrench_map.shape[1]
        self.guided = cfg.reward.mode == "mpc_guided"
        self.reference = ReferenceGenerator(cfg.platform, cfg.mpc, cfg.mpc_weights)

    def observe(self, x):
        return observe(x, self.target)

    def step(self, x, t, filter_value, output_on, action) -> StepResult:
        """Advance every row by one control period from time ``t``."""
        cfg = self.cfg
        p = cfg.platform
        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        wrench_cmd = a * self.box
        duty = allocate_array(wrench_cmd, self.layout)
        n_sub = cfg.episode.pwpf_substeps
        h = p.dt / n_sub
        ref = (self.reference.first_derivative(x)[:, ACCEL_CHANNELS] if self.guided
               else np.zeros((len(x), 3)))

        xs, fv, on = x.copy(), filter_value.copy(), output_on.copy()
        open_sum = np.zeros_like(duty)
        for _ in range(n_sub):
            fv, on, frac = pwpf_step_array(fv, on, duty, cfg.pwpf, h)
            open_sum += frac
            xs = rk4_array(xs, frac @ self.layout.wrench_map.T, p.mass, p.inertia, h)
        valve_open = open_sum / n_sub
        realized = valve_open @ self.layout.wrench_map.T

        achieved = np.column_stack([(xs[:, 2:4] - x[:, 2:4]) / p.dt,
                                    (xs[:, OMEGA] - x[:, OMEGA]) / p.dt])
        sigma, delta = errors_array(xs, self.target)
        terms = np.column_stack(reward_terms(achieved, ref, a, sigma, delta, t + p.dt,
                                             cfg.reward))
        return StepResult(xs, fv, on, wrench_cmd, realized, valve_open, achieved, ref, terms)
