import math

import numpy as np
import pytest

from floatctl import reward as rw
from floatctl.dynamics import PlatformState

CFG = rw.RewardConfig()
Z3 = np.zeros(3)


def test_zero_error_zero_action_is_55():
    total = rw.reward(Z3, Z3, Z3, rw.StabilizationErrors(0.0, 0.0), 0.0, CFG)
    assert total == 55.0


def test_terms_by_hand():
    ach = np.array([0.1, -0.2, 0.3])
    ref = np.array([0.0, 0.1, -0.1])
    act = np.array([0.5, -0.25, 1.0])
    tr, ef, br, bp = rw.reward_terms(ach, ref, act, 0.2, 0.1, 4.0, CFG)
    assert tr == pytest.approx(-(1 * 0.01 + 10 * 0.09 + 5 * 0.16))
    assert ef == pytest.approx(-10 * (0.25 + 0.0625 + 1.0))
    k = 1 + 0.5 * 4.0
    assert br == pytest.approx(100 / (1 + math.exp(k * 0.1)))
    assert bp == pytest.approx(10 / (1 + math.exp(k * 0.2)))


def test_swap_pairing():
    swapped = rw.RewardConfig(swap_bonus_pairing=True)
    _, _, br, bp = rw.reward_terms(Z3, Z3, Z3, 0.2, 0.0, 0.0, swapped)
    assert br == pytest.approx(100 / (1 + math.exp(0.2))) and bp == 5.0


def test_bonus_stays_finite_for_huge_errors():
    _, _, br, bp = rw.reward_terms(Z3, Z3, Z3, 1e6, 1e6, 1e3, CFG)
    assert br == 0.0 and bp == 0.0


def test_ppo_only_ignores_reference():
    only = rw.RewardConfig(mode="ppo_only")
    err = rw.StabilizationErrors(0.3, 0.2)
    ach, ref, act = np.array([0.1, 0.2, 0.3]), np.array([1.0, 2.0, 3.0]), np.array([0.1, 0, 0])
    assert rw.reward(ach, ref, act, err, 2.0, only) == rw.reward(ach, Z3, act, err, 2.0, CFG)


def test_sharpness_grows_and_profile_rises_at_small_error():
    prof = rw.terminal_bonus_profile(rw.StabilizationErrors(0.0, 0.0), [0, 10, 20], CFG)
    assert np.allclose(prof, 55.0)
    prof = rw.terminal_bonus_profile(rw.StabilizationErrors(0.5, 0.5), [0, 10, 20], CFG)
    assert np.all(np.diff(prof) < 0)
    with pytest.raises(ValueError):
        rw.terminal_bonus_profile(rw.StabilizationErrors(0, 0), [1, 0], CFG)


def test_errors_wrap_heading():
    s = PlatformState(np.array([0.3, 0.4]), np.zeros(2), 2 * math.pi - 0.1, 0.0)
    e = rw.stabilization_errors(s, PlatformState(np.zeros(2), np.zeros(2), 0.0, 0.0))
    assert e.sigma == pytest.approx(0.5) and e.delta == pytest.approx(0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        rw.RewardConfig(deriv_weight=[1.0, -1.0, 1.0])
    with pytest.raises(ValueError):
        rw.RewardConfig(effort_weight=[[1, 1, 0], [0, 1, 0], [0, 0, 1]])
    with pytest.raises(ValueError):
        rw.RewardConfig(mode="other")
    assert np.array_equal(rw.RewardConfig(deriv_weight=np.diag([1, 2, 3])).deriv_weight, [1, 2, 3])


def test_hold_value_sums_remaining_bonuses():
    disc, undisc = rw.hold_value(0.0, 0.0, 59.0, 60.0, 0.1, 0.98, CFG)
    assert undisc[0] == pytest.approx(550.0)
    assert disc[0] == pytest.approx(55.0 * (1 - 0.98 ** 10) / (1 - 0.98))
    disc, undisc = rw.hold_value([0.0, 0.0], [0.0, 0.0], [60.0, 30.0], 60.0, 0.1, 0.98, CFG)
    assert undisc[0] == 0.0 and undisc[1] == pytest.approx(55.0 * 300)


def test_worked_examples():
    far = rw.StabilizationErrors(50.0, 50.0)
    assert rw.reward(np.array([1.0, 0, 0]), Z3, Z3, far, 100.0, CFG) == pytest.approx(-1.0)
    tr, ef, _, _ = rw.reward_terms(Z3, Z3, np.array([1.0, 0, 0]), 0, 0, 0, CFG)
    assert ef == -10.0 and tr == 0.0
    s = PlatformState(np.array([0.03, 0.04]), np.zeros(2), math.radians(359), 0.0)
    e = rw.stabilization_errors(s, PlatformState(np.zeros(2), np.zeros(2), 0.0, 0.0))
    assert e.sigma == pytest.approx(0.05) and e.delta == pytest.approx(math.radians(1))


def test_bonus_decreases_with_error_and_stays_in_range():
    deltas = np.linspace(0.01, 3, 50)
    _, _, br, bp = rw.reward_terms(Z3, Z3, Z3, deltas, deltas, 5.0, CFG)
    assert np.all(np.diff(br) < 0) and np.all(np.diff(bp) < 0)
    assert np.all((br > 0) & (br < 100)) and np.all((bp > 0) & (bp < 10))
