import struct

import numpy as np
import pytest

from floatctl import checkpoint as ck
from floatctl.config import RunConfig
from floatctl.harness import make_agent


@pytest.fixture
def trained_like():
    rng = np.random.default_rng(3)
    cfg = RunConfig().replace("ppo", gamma=0.97)
    agent = make_agent(cfg, rng)
    for p in agent.policy.params + agent.critic.params:
        p += rng.normal(0, 0.1, p.shape)
    agent.obs_normalizer.update(rng.normal(1, 3, (50, 7)))
    agent.return_normalizer.update(rng.normal(100, 30, (50, 1)))
    agent.critic.offset, agent.critic.scale = 12.5, 3.25
    agent.actor_opt.step, agent.actor_opt.lr = 17, 1.234e-4
    agent.actor_opt.m[0] += 0.5
    agent.epsilon, agent.updates, agent.episodes = 0.11, 4, 800
    return agent, cfg


def test_round_trip_is_exact(tmp_path, trained_like):
    agent, cfg = trained_like
    path = tmp_path / "a.fcp"
    ck.save_checkpoint(path, agent, cfg, {"seed": 5, "mode": "mpc_guided"})
    loaded, cfg2, meta = ck.load_checkpoint(path)
    for name, arr in ck.agent_arrays(agent).items():
        assert np.array_equal(arr, ck.agent_arrays(loaded)[name]), name
    assert cfg2.digest() == cfg.digest()
    assert meta == {"seed": 5, "mode": "mpc_guided"}
    assert (loaded.epsilon, loaded.updates, loaded.episodes) == (0.11, 4, 800)
    assert loaded.actor_opt.step == 17 and loaded.actor_opt.lr == 1.234e-4
    assert (loaded.critic.offset, loaded.critic.scale) == (12.5, 3.25)
    probe = np.random.default_rng(0).normal(size=(100, 7))
    a = agent.policy.mean(agent.obs_normalizer.apply(probe))
    b = loaded.policy.mean(loaded.obs_normalizer.apply(probe))
    assert np.array_equal(a, b)
    assert np.array_equal(agent.critic(probe), loaded.critic(probe))


def test_layout_prefix(trained_like):
    blob = ck.to_bytes(*trained_like)
    magic, version, hlen = struct.unpack_from("<8sIQ", blob)
    assert magic == b"FLTCKPT\0" and version == ck.VERSION
    assert blob[20:20 + hlen].startswith(b"{")


def test_truncated_file_rejected(tmp_path, trained_like):
    blob = ck.to_bytes(*trained_like)
    for cut in (10, len(blob) // 2, len(blob) - 1):
        with pytest.raises(ck.CorruptCheckpointError):
            ck.from_bytes(blob[:cut])


def test_flipped_byte_rejected(trained_like):
    blob = bytearray(ck.to_bytes(*trained_like))
    blob[len(blob) // 2] ^= 0xFF
    with pytest.raises(ck.CorruptCheckpointError):
        ck.from_bytes(bytes(blob))


def test_bad_magic_and_version(trained_like):
    blob = ck.to_bytes(*trained_like)
    with pytest.raises(ck.CorruptCheckpointError):
        ck.from_bytes(b"NOTACKPT" + blob[8:])
    bumped = blob[:8] + struct.pack("<I", ck.VERSION + 1) + blob[12:]
    with pytest.raises(ck.CheckpointVersionError):
        ck.from_bytes(bumped)
    assert issubclass(ck.CheckpointVersionError, ck.CheckpointError)


def test_failed_save_keeps_previous_file(tmp_path, trained_like, monkeypatch):
    agent, cfg = trained_like
    path = tmp_path / "c.fcp"
    ck.save_checkpoint(path, agent, cfg)
    good = path.read_bytes()

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(ck.os, "replace", boom)
    agent.epsilon = 0.3
    with pytest.raises(OSError):
        ck.save_checkpoint(path, agent, cfg)
    assert path.read_bytes() == good
