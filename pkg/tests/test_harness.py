import dataclasses
import math

import numpy as np
import pytest

from conftest import zero_policy_agent
from floatctl import harness
from floatctl.config import Disturbance, DisturbanceSchedule, RunConfig
from floatctl.verify import check_success_predicate, tiny_config

PPO_ONLY = RunConfig().with_mode("ppo_only")


def test_success_predicate_boundaries():
    ok, detail = check_success_predicate()
    assert ok, detail
    assert harness.success_check(np.zeros(6))
    assert not harness.success_check(np.array([0, 0, 0, 0, math.radians(6), 0]))
    with pytest.raises(ValueError):
        harness.success_check(np.full(6, np.nan))


def test_immediate_success_at_target(zero_agent):
    ro = harness.run_episode(zero_agent, RunConfig(), "train", seed=0, initial_state=np.zeros(6))
    assert ro.outcome[0] == harness.SUCCESS and ro.counts[0] == 0
    assert len(ro.to_batch()) == 0


def test_train_episode_never_exceeds_600_steps():
    agent = zero_policy_agent(PPO_ONLY, log_std=np.log(0.05))
    ro = harness.run_episode(agent, PPO_ONLY, "train", seed=1,
                             initial_state=np.array([1.0, 0.5, 0, 0, 0.3, 0]))
    assert ro.counts[0] == 600 and ro.outcome[0] == harness.TIMEOUT
    assert ro.episode(0)["time"][-1] == pytest.approx(59.9)


def test_room_exit_ends_episode_with_penalty(zero_agent):
    x0 = np.array([2.45, 0, 0.2, 0, 0, 0])
    ro = harness.run_episode(zero_agent, PPO_ONLY, "test", initial_state=x0, duration=5.0)
    # 0.05 m at 0.2 m/s: out on the third step
    assert ro.outcome[0] == harness.EXITED and ro.counts[0] == 3
    ep = ro.episode(0)
    assert ep["reward"][-1] == pytest.approx(ep["terms"][-1].sum() - 100.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_state_aborts(zero_agent):
    with pytest.raises(harness.SimulationError):
        harness.run_episode(zero_agent, PPO_ONLY, "test",
                            initial_state=np.array([0.5, 0, np.inf, 0, 0, 0]), duration=1.0)


def test_identical_seeds_give_identical_episodes():
    agent = zero_policy_agent(log_std=np.log(0.5))
    cfg = RunConfig().replace("episode", train_time_limit=3.0)
    a = harness.run_episode(agent, cfg, "train", seed=7)
    b = harness.run_episode(agent, cfg, "train", seed=7)
    for k in a.steps:
        assert np.array_equal(a.steps[k], b.steps[k])


def test_hold_value_credited_on_success():
    agent = zero_policy_agent(PPO_ONLY, log_std=-30.0)
    # drifting slowly into the success region
    x0 = np.array([0.06, 0, -0.02, 0, 0, 0])
    ro = harness.run_episode(agent, PPO_ONLY, "train", initial_state=x0)
    assert ro.outcome[0] == harness.SUCCESS
    assert ro.terminal_values[0] > 0 and ro.hold_rewards[0] > ro.terminal_values[0]
    assert ro.episode_returns()[0] == pytest.approx(ro.steps["reward"].sum() + ro.hold_rewards[0])


def test_one_update_for_200_episode_cap():
    cfg = PPO_ONLY.replace("ppo", max_episodes=200, minibatch_size=512, epochs=1)
    cfg = cfg.replace("episode", train_time_limit=0.5)
    res = harness.train(cfg, seed=0)
    assert len(res.log) == 1 and res.agent.updates == 1 and res.agent.episodes == 200


def test_episode_accounting_with_partial_batch(tmp_path):
    cfg = tiny_config("ppo_only").replace("ppo", max_episodes=15)
    res = harness.train(cfg, seed=0, out_dir=tmp_path)
    assert [r["episodes"] for r in res.log] == [6, 12, 15]
    rows = (tmp_path / "train_log.csv").read_text().splitlines()
    assert rows[0].split(",") == harness.TRAIN_LOG_COLUMNS and len(rows) == 4
    assert (tmp_path / "checkpoint.fcp").exists()


def test_normalized_reward_uses_running_max():
    res = harness.train(tiny_config("ppo_only"), seed=2)
    rets = [r["mean_return"] for r in res.log]
    best = np.maximum.accumulate(np.abs(rets))
    assert np.allclose([r["normalized_reward"] for r in res.log], np.array(rets) / best)


def test_empty_schedule_from_target_holds_success(zero_agent):
    sched = DisturbanceSchedule(events=(), duration=20.0)
    log, metrics = harness.evaluate(zero_agent, RunConfig(), sched)
    assert len(log["time"]) == 200 and np.all(log["success"])
    assert len(metrics) == 1 and metrics[0].time_to_success == 0.0


def test_metrics_recomputable_from_csv(tmp_path, zero_agent):
    sched = DisturbanceSchedule(events=(Disturbance(3.0, (0.15, 0.0)), Disturbance(6.0, (0, 0.02), 0.01)),
                                duration=10.0)
    log, metrics = harness.evaluate(zero_agent, PPO_ONLY, sched, out_dir=tmp_path)
    back = harness.read_log_csv(tmp_path / "eval_log.csv")
    again = harness.window_metrics(back, sched)
    flat = [v for m in metrics for v in dataclasses.astuple(m)]
    assert [v for m in again for v in dataclasses.astuple(m)] == pytest.approx(flat, nan_ok=True)
    assert [m.start for m in metrics] == [0.0, 3.0, 6.0]
    assert np.flatnonzero(back["disturbance"]).tolist() == [30, 60]
    # without control the push carries the platform away
    assert not metrics[1].recovered and metrics[1].peak_excursion > 0.1


def test_schedule_validation():
    with pytest.raises(ValueError):
        DisturbanceSchedule(events=(Disturbance(5.0, (0, 0)), Disturbance(5.0, (0, 0))))
    with pytest.raises(ValueError):
        DisturbanceSchedule(events=(Disturbance(120.0, (0, 0)),), duration=100.0)
    assert len(DisturbanceSchedule.default().events) == 4
