import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floatctl import pwpf
from floatctl.verify import pwpf_fine_duty

CFG = pwpf.PwpfConfig()


def test_config_validation():
    with pytest.raises(ValueError):
        pwpf.PwpfConfig(on_threshold=0.1, off_threshold=0.2)
    with pytest.raises(ValueError):
        pwpf.PwpfConfig(filter_time_constant=0.0)
    with pytest.raises(ValueError):
        pwpf.pwpf_step_array(0.0, False, 0.5, CFG, 0.0)


def test_zero_command_never_fires():
    x, on = np.zeros(()), np.zeros((), dtype=bool)
    for _ in range(1000):
        x, on, frac = pwpf.pwpf_step_array(x, on, 0.0, CFG, 0.01)
        assert not on and frac == 0.0


def test_commands_inside_dead_zone_never_fire():
    c = 0.99 * CFG.dead_zone
    assert pwpf.long_run_duty(CFG, c, duration=60.0, settle=0.0) == 0.0
    assert pwpf.long_run_duty(CFG, 1.2 * CFG.dead_zone, duration=60.0) > 0.0


def test_trigger_holds_inside_band():
    mid = 0.5 * (CFG.on_threshold + CFG.off_threshold)
    assert pwpf.trigger(mid, True, CFG) and not pwpf.trigger(mid, False, CFG)
    assert pwpf.trigger(CFG.on_threshold, False, CFG)
    assert not pwpf.trigger(CFG.off_threshold, True, CFG)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.16, 0.44), st.booleans(), st.floats(-1, 1))
def test_no_switch_without_reaching_threshold(x0, on0, command):
    """If the filter stays strictly inside the band over the step, the output is unchanged."""
    x, on, frac = pwpf.pwpf_step_array(x0, on0, command, CFG, 0.001)
    target = CFG.filter_gain * (command - on0)
    end = target + (x0 - target) * np.exp(-0.001 / CFG.filter_time_constant)
    if CFG.off_threshold < end < CFG.on_threshold:
        assert bool(on) == on0
        assert frac == (1.0 if on0 else 0.0)


def test_single_channel_matches_array():
    s = pwpf.PwpfChannelState()
    xs, ons = np.zeros(()), np.zeros((), dtype=bool)
    for _ in range(300):
        s, f1 = pwpf.pwpf_step(s, CFG, 0.4, 0.01)
        xs, ons, f2 = pwpf.pwpf_step_array(xs, ons, 0.4, CFG, 0.01)
        assert f1 == float(f2) and s.filter_value == float(xs)


def test_step_size_invariance():
    """Exact switching makes one coarse step equal ten fine steps."""
    x1, on1, f1 = pwpf.pwpf_step_array(0.3, False, 0.6, CFG, 0.1)
    x2, on2, acc = 0.3, False, 0.0
    for _ in range(10):
        x2, on2, f = pwpf.pwpf_step_array(x2, on2, 0.6, CFG, 0.01)
        acc += float(f) / 10
    assert np.isclose(float(x1), float(x2), atol=1e-12) and bool(on1) == bool(on2)
    assert np.isclose(float(f1), acc, atol=1e-12)


def test_duty_is_monotone_and_bounded():
    cmds = np.linspace(0, 1, 21)
    duty = pwpf.duty_sweep(CFG, cmds, duration=60.0, settle=10.0)
    assert np.all(np.diff(duty) >= -1e-3)
    assert duty[0] == 0.0 and np.all((duty >= 0) & (duty <= 1))
    assert duty[-1] > 0.9


@pytest.mark.parametrize("command", [0.15, 0.4, 0.8])
def test_duty_matches_fine_oracle(command):
    fast = pwpf.long_run_duty(CFG, command, duration=60.0, settle=10.0)
    fine = pwpf_fine_duty(CFG, command, duration=60.0, settle=10.0)
    assert abs(fast - fine) <= 0.02


def test_channels_are_independent():
    rng = np.random.default_rng(0)
    cmds = rng.uniform(0, 1, 8)
    xb, onb = np.zeros(8), np.zeros(8, dtype=bool)
    xs = [np.zeros(()) for _ in range(8)]
    ons = [np.zeros((), dtype=bool) for _ in range(8)]
    for _ in range(200):
        xb, onb, fb = pwpf.pwpf_step_array(xb, onb, cmds, CFG, 0.01)
        for i in range(8):
            xs[i], ons[i], f = pwpf.pwpf_step_array(xs[i], ons[i], cmds[i], CFG, 0.01)
            assert float(f) == fb[i] and float(xs[i]) == xb[i]
