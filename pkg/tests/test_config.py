import math

import numpy as np
import pytest

from floatctl.config import DisturbanceSchedule, EpisodeConfig, RunConfig


def test_defaults_round_trip_through_yaml(tmp_path):
    cfg = RunConfig()
    path = tmp_path / "c.yaml"
    path.write_text(cfg.dump())
    again = RunConfig.load(path)
    assert again.digest() == cfg.digest()
    assert np.all(np.isinf(again.mpc.state_bounds[2:]))


def test_partial_file_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("ppo:\n  max_episodes: 2000\nreward:\n  mode: ppo_only\n"
                    "mpc_weights:\n  rho: [10, 10, 10]\n")
    cfg = RunConfig.load(path)
    assert cfg.ppo.max_episodes == 2000 and cfg.reward.mode == "ppo_only"
    assert np.array_equal(cfg.mpc_weights.rho, 10 * np.eye(3))
    assert cfg.ppo.batch_episodes == 200


def test_unknown_keys_rejected():
    with pytest.raises(ValueError):
        RunConfig.from_dict({"pppo": {}})
    with pytest.raises(ValueError):
        RunConfig.from_dict({"ppo": {"learning_rate": 1}})


def test_mpc_step_must_match_control_period():
    with pytest.raises(ValueError):
        RunConfig.from_dict({"mpc": {"step": 0.05, "horizon": 5.0}})


def test_episode_validation():
    with pytest.raises(ValueError):
        EpisodeConfig(train_time_limit=0)
    with pytest.raises(ValueError):
        EpisodeConfig(angle_tolerance_deg=-1)


def test_digest_tracks_content():
    a = RunConfig()
    assert a.digest() == RunConfig().digest()
    assert a.with_mode("ppo_only").digest() != a.digest()


def test_schedule_load(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("duration: 50\nevents:\n  - {time: 10, dv: [0.1, 0], domega: 0.1}\n")
    s = DisturbanceSchedule.load(path)
    assert s.duration == 50 and s.events[0].dv == (0.1, 0.0)
    d = DisturbanceSchedule.default()
    assert [e.time for e in d.events] == [20, 40, 60, 80]
    assert all(math.isclose(math.hypot(*e.dv), 0.15) for e in d.events)
