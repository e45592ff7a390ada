"""Pulse-width pulse-frequency modulation of per-nozzle duty commands.

Each channel is a first-order lag driven by ``gain * (command - output)``
feeding a Schmitt trigger.  Between switching instants the filter is linear
with constant input, so the switching times are solved exactly; the returned
``on_fraction`` is the share of the step the valve was open (0 or 1 unless a
switch fell inside the step).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MAX_EVENTS = 64


@dataclass(frozen=True)
class PwpfConfig:
    filter_gain: float = 4.5
    filter_time_constant: float = 0.15   # s
    on_threshold: float = 0.45
    off_threshold: float = 0.15

    def __post_init__(self):
        if self.filter_time_constant <= 0:
            raise ValueError("filter time constant must be positive")
        if not (0 < self.off_threshold < self.on_threshold < self.filter_gain):
            raise ValueError("need 0 < off_threshold < on_threshold < filter_gain")

    @property
    def dead_zone(self) -> float:
        """Largest constant command that never fires the trigger."""
        return self.on_threshold / self.filter_gain


@dataclass(frozen=True)
class PwpfChannelState:
    filter_value: float = 0.0
    output_on: bool = False


def trigger(filter_value, previous_on, cfg: PwpfConfig):
    """Schmitt trigger with hysteresis; holds the previous output in the band."""
    filter_value = np.asarray(filter_value, dtype=float)
    previous_on = np.asarray(previous_on, dtype=bool)
    return np.where(filter_value >= cfg.on_threshold, True,
                    np.where(filter_value <= cfg.off_threshold, False, previous_on))


def pwpf_step_array(filter_value, output_on, command, cfg: PwpfConfig, dt: float):
    """Advance many independent channels by ``dt``.

    Returns ``(filter_value, output_on, on_fraction)`` with the input shapes.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.array(filter_value, dtype=float)
    on = np.array(output_on, dtype=bool)
    c = np.broadcast_to(np.asarray(command, dtype=float), x.shape)
    tau, k = cfg.filter_time_constant, cfg.filter_gain
    u_on, u_off = cfg.on_threshold, cfg.off_threshold

    # a trigger that should already have fired does so at the start of the step
    on = trigger(x, on, cfg)
    remaining = np.full(x.shape, float(dt))
    on_time = np.zeros(x.shape)

    for _ in range(_MAX_EVENTS):
        active = remaining > 0.0
        if not np.any(active):
            break
        target = k * (c - on)
        thr = np.where(on, u_off, u_on)
        # the crossing happens only if the asymptote lies beyond the threshold
        crossing = np.where(on, target < thr, target > thr) & active
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = (x - target) / (thr - target)
            t_cross = np.where(crossing, tau * np.log(np.maximum(ratio, 1.0)), np.inf)
        switch = t_cross < remaining
        h = np.where(switch, t_cross, remaining)
        h = np.where(active, h, 0.0)
        x = np.where(switch, thr, target + (x - target) * np.exp(-h / tau))
        on_time += np.where(on, h, 0.0)
        remaining = np.where(switch, remaining - h, 0.0)
        on = np.where(switch, ~on, on)
    else:  # pragma: no cover - guarded by the threshold ordering invariant
        raise RuntimeError("PWPF switching did not settle within one step")

    return x, on, on_time / dt


def pwpf_step(state: PwpfChannelState, cfg: PwpfConfig, command: float, dt: float):
    """Single-channel step; returns ``(new_state, on_fraction)``."""
    x, on, frac = pwpf_step_array(state.filter_value, state.output_on, command, cfg, dt)
    return PwpfChannelState(float(x), bool(on)), float(frac)


def long_run_duty(cfg: PwpfConfig, command: float, dt: float = 0.01,
                  duration: float = 120.0, settle: float = 20.0) -> float:
    """Average on-fraction for a held command, after an initial settling time."""
    n = int(round(duration / dt))
    skip = int(round(settle / dt))
    x, on = np.zeros(()), np.zeros((), dtype=bool)
    total = 0.0
    for i in range(n):
        x, on, frac = pwpf_step_array(x, on, command, cfg, dt)
        if i >= skip:
            total += float(frac)
    return total / (n - skip)


def duty_sweep(cfg: PwpfConfig, commands, dt: float = 0.01, duration: float = 120.0,
               settle: float = 20.0) -> np.ndarray:
    """Long-run duty for each command; all amplitudes simulated side by side."""
    commands = np.asarray(commands, dtype=float)
    n = int(round(duration / dt))
    skip = int(round(settle / dt))
    x = np.zeros(commands.shape)
    on = np.zeros(commands.shape, dtype=bool)
    total = np.zeros(commands.shape)
    for i in range(n):
        x, on, frac = pwpf_step_array(x, on, commands, cfg, dt)
        if i >= skip:
            total += frac
    return total / (n - skip)
