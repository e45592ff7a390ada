"""Self-describing binary checkpoints.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"FLTCKPT\\0"
    8       4     uint32 format version
    12      8     uint64 header length H
    20      H     UTF-8 JSON header
    20+H    P     payload: float64 little-endian arrays, back to back
    20+H+P  32    SHA-256 of every preceding byte

The header lists every array as ``{"name", "shape", "offset", "count"}``
(offset and count in float64 elements from the payload start) together with
the run configuration, the scalar training state and free-form metadata.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .config import RunConfig
from .neural import AdamState, GaussianPolicy, Mlp, RunningNormalizer
from .ppo import Agent, ValueFunction

MAGIC = b"FLTCKPT\0"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DIGEST = 32


class CheckpointError(ValueError):
    """Base class for unreadable checkpoints."""


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def _mlp_arrays(prefix, net: Mlp):
    return {f"{prefix}.{i}": p for i, p in enumerate(net.params)}


def _adam_arrays(prefix, opt: AdamState):
    out = {}
    for i, (m, v) in enumerate(zip(opt.m, opt.v)):
        out[f"{prefix}.m.{i}"] = m
        out[f"{prefix}.v.{i}"] = v
    return out


def agent_arrays(agent: Agent) -> dict:
    arrays = {}
    arrays.update(_mlp_arrays("actor", agent.policy.mean_net))
    arrays["actor.log_std"] = agent.policy.log_std
    arrays.update(_mlp_arrays("critic", agent.critic.net))
    arrays["obs_norm.mean"] = agent.obs_normalizer.mean
    arrays["obs_norm.m2"] = agent.obs_normalizer.m2
    arrays["ret_norm.mean"] = agent.return_normalizer.mean
    arrays["ret_norm.m2"] = agent.return_normalizer.m2
    arrays.update(_adam_arrays("actor_opt", agent.actor_opt))
    arrays.update(_adam_arrays("critic_opt", agent.critic_opt))
    return arrays


def _scalars(agent: Agent) -> dict:
    return {
        "actor_layers": agent.policy.mean_net.layer_sizes,
        "critic_layers": agent.critic.net.layer_sizes,
        "critic_offset": agent.critic.offset, "critic_scale": agent.critic.scale,
        "obs_norm_count": agent.obs_normalizer.count,
        "ret_norm_count": agent.return_normalizer.count,
        "epsilon": agent.epsilon, "updates": agent.updates, "episodes": agent.episodes,
        "actor_opt": {"lr": agent.actor_opt.lr, "beta1": agent.actor_opt.beta1,
                      "beta2": agent.actor_opt.beta2, "eps": agent.actor_opt.eps,
                      "step": agent.actor_opt.step},
        "critic_opt": {"lr": agent.critic_opt.lr, "beta1": agent.critic_opt.beta1,
                       "beta2": agent.critic_opt.beta2, "eps": agent.critic_opt.eps,
                       "step": agent.critic_opt.step},
    }


def to_bytes(agent: Agent, cfg: RunConfig, meta: dict | None = None) -> bytes:
    arrays = agent_arrays(agent)
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "count": a.size})
        chunks.append(a.tobytes())
        offset += a.size
    header = json.dumps({"arrays": entries, "scalars": _scalars(agent), "config": cfg.to_dict(),
                         "meta": meta or {}}, sort_keys=True).encode()
    body = _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path, agent: Agent, cfg: RunConfig, meta: dict | None = None):
    """Write atomically: a crash mid-write leaves the previous file intact."""
    data = to_bytes(agent, cfg, meta)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def parse_bytes(data: bytes):
    """Validate and decode; returns ``(header, arrays)``."""
    if len(data) < _PREFIX.size + _DIGEST:
        raise CorruptCheckpointError("file too short to be a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CorruptCheckpointError("bad magic; not a checkpoint file")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, "
                                     f"this build reads version {VERSION}")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError("checksum mismatch; file truncated or damaged")
    start = _PREFIX.size
    if start + hlen > len(body):
        raise CorruptCheckpointError("header length exceeds file size")
    try:
        header = json.loads(body[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"unreadable header: {exc}") from None
    payload = body[start + hlen:]
    if len(payload) % 8:
        raise CorruptCheckpointError("payload is not a whole number of float64 values")
    flat = np.frombuffer(payload, dtype="<f8")
    arrays = {}
    for e in header["arrays"]:
        lo, n = int(e["offset"]), int(e["count"])
        if lo < 0 or lo + n > flat.size or int(np.prod(e["shape"], dtype=int)) != n:
            raise CorruptCheckpointError(f"array {e['name']} does not fit the payload")
        arrays[e["name"]] = flat[lo:lo + n].reshape(e["shape"]).astype(float)
    return header, arrays


def _restore_mlp(layers, arrays, prefix) -> Mlp:
    net = Mlp(layers, rng=0)
    net.set_params([arrays[f"{prefix}.{i}"] for i in range(2 * (len(layers) - 1))])
    return net


def _restore_adam(info, arrays, prefix, n) -> AdamState:
    return AdamState(lr=info["lr"], beta1=info["beta1"], beta2=info["beta2"], eps=info["eps"],
                     step=info["step"], m=[arrays[f"{prefix}.m.{i}"].copy() for i in range(n)],
                     v=[arrays[f"{prefix}.v.{i}"].copy() for i in range(n)])


def from_bytes(data: bytes):
    """Returns ``(agent, config, meta)``."""
    header, arrays = parse_bytes(data)
    try:
        sc = header["scalars"]
        actor = _restore_mlp(sc["actor_layers"], arrays, "actor")
        critic_net = _restore_mlp(sc["critic_layers"], arrays, "critic")
        policy = GaussianPolicy(actor, arrays["actor.log_std"])
        critic = ValueFunction(critic_net, sc["critic_offset"], sc["critic_scale"])
        obs_norm = RunningNormalizer(arrays["obs_norm.mean"].size)
        obs_norm.count, obs_norm.mean, obs_norm.m2 = (sc["obs_norm_count"], arrays["obs_norm.mean"],
                                                      arrays["obs_norm.m2"])
        ret_norm = RunningNormalizer(arrays["ret_norm.mean"].size)
        ret_norm.count, ret_norm.mean, ret_norm.m2 = (sc["ret_norm_count"], arrays["ret_norm.mean"],
                                                      arrays["ret_norm.m2"])
        agent = Agent(policy, critic, obs_norm, ret_norm,
                      _restore_adam(sc["actor_opt"], arrays, "actor_opt", len(policy.params)),
                      _restore_adam(sc["critic_opt"], arrays, "critic_opt", len(critic.params)),
                      sc["epsilon"], sc["updates"], sc["episodes"])
        cfg = RunConfig.from_dict(header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"inconsistent checkpoint contents: {exc}") from None
    return agent, cfg, header.get("meta", {})


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
