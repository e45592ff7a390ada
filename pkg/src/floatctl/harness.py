"""Episodes, batched collection, the training loop and disturbance evaluation."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .config import DisturbanceSchedule, EpisodeConfig, RunConfig
from .dynamics import OMEGA, PlatformState
from .env import ACT_DIM, OBS_DIM, PlatformEnv, out_of_room, sample_initial_states, success_mask
from .ppo import Agent, TrajectoryBatch, update
from .reward import errors_array, hold_value

# episode outcomes
RUNNING, SUCCESS, TIMEOUT, EXITED = 0, 1, 2, 3
OUTCOME_NAMES = {RUNNING: "running", SUCCESS: "success", TIMEOUT: "timeout", EXITED: "exited"}

TRAIN_LOG_COLUMNS = ["update", "episodes", "mean_return", "normalized_reward", "kl", "epsilon",
                     "actor_lr", "value_loss", "objective", "success_rate", "exit_rate",
                     "mean_length"]

STEP_LOG_COLUMNS = (["time", "x", "y", "vx", "vy", "theta", "omega",
                     "cmd_fx", "cmd_fy", "cmd_m", "real_fx", "real_fy", "real_m"]
                    + [f"valve{i}" for i in range(8)]
                    + ["ref_ax", "ref_ay", "ref_alpha", "tracking", "effort", "bonus_rot",
                       "bonus_pos", "reward", "success", "disturbance"])


class SimulationError(RuntimeError):
    """A platform state became non-finite; the episode cannot continue."""


def success_check(state, ep: EpisodeConfig | None = None, target=None) -> bool:
    """True iff position, speed, angle and rate are all inside tolerance."""
    ep = ep or EpisodeConfig()
    x = state.as_array() if isinstance(state, PlatformState) else np.asarray(state, dtype=float)
    if x.shape != (6,) or not np.all(np.isfinite(x)):
        raise ValueError("success_check needs one finite 6-vector state")
    target = np.asarray(ep.target if target is None else target, dtype=float)
    return bool(success_mask(x, target, ep)[0])


@dataclass
class Rollout:
    """Transitions of a group of episodes, stored episode by episode."""

    counts: np.ndarray              # transitions per episode
    outcome: np.ndarray             # per episode
    terminal_values: np.ndarray     # discounted hold value credited after the end
    hold_rewards: np.ndarray        # its undiscounted counterpart
    initial_states: np.ndarray
    steps: dict = field(default_factory=dict)   # name -> (T, ...) arrays

    @property
    def starts(self):
        return np.concatenate([[0], np.cumsum(self.counts)[:-1]]).astype(int)

    def episode(self, i) -> dict:
        s = self.starts[i]
        return {k: v[s:s + self.counts[i]] for k, v in self.steps.items()}

    def episode_returns(self):
        """Undiscounted cumulative reward per episode, hold value included."""
        sums = np.zeros(len(self.counts))
        if len(self.steps.get("reward", ())):
            ep_id = np.repeat(np.arange(len(self.counts)), self.counts)
            np.add.at(sums, ep_id, self.steps["reward"])
        return sums + self.hold_rewards

    def to_batch(self) -> TrajectoryBatch:
        s = self.steps
        if not s:
            e = np.zeros(0)
            return TrajectoryBatch(np.zeros((0, OBS_DIM)), np.zeros((0, ACT_DIM)), e, e, e,
                                   np.zeros(0, dtype=bool), self.starts, self.terminal_values.copy())
        dones = np.zeros(len(s["reward"]), dtype=bool)
        ends = self.starts + self.counts - 1
        dones[ends[self.counts > 0]] = True
        return TrajectoryBatch(observations=s["obs"], actions=s["action"], rewards=s["reward"],
                               old_log_probs=s["log_prob"], values=s["value"], dones=dones,
                               episode_starts=self.starts,
                               terminal_values=self.terminal_values.copy())


def rollout(env: PlatformEnv, agent: Agent, x0, time_limit: float, rng, deterministic=False,
            terminate_on_success=True, schedule: DisturbanceSchedule | None = None) -> Rollout:
    """Run ``len(x0)`` episodes in lockstep with a frozen policy snapshot."""
    cfg = env.cfg
    dt = cfg.platform.dt
    x = np.array(x0, dtype=float, ndmin=2)
    n_env = len(x)
    n_max = int(round(time_limit / dt))
    fv = np.zeros((n_env, env.n_thrusters))
    on = np.zeros((n_env, env.n_thrusters), dtype=bool)
    outcome = np.full(n_env, RUNNING)
    active = np.ones(n_env, dtype=bool)
    if terminate_on_success:
        start_ok = success_mask(x, env.target, cfg.episode)
        outcome[start_ok] = SUCCESS
        active &= ~start_ok
    end_state = np.full((n_env, 3), np.nan)     # (t, sigma, delta) at success
    events = list(schedule.events) if schedule else []
    rows = []
    for k in range(n_max):
        t = k * dt
        kicked = np.zeros(n_env, dtype=bool)
        while events and events[0].time < t + 0.5 * dt:
            ev = events.pop(0)
            x[active, 2:4] += ev.dv
            x[active, OMEGA] += ev.domega
            kicked[active] = True
        idx = np.flatnonzero(active)
        if not len(idx):
            break
        xa = x[idx]
        raw = env.observe(xa)
        obs = agent.obs_normalizer.apply(raw)
        if deterministic:
            # evaluation only; the density is never used and may be degenerate
            action = agent.policy.mean(obs)
            log_prob = np.zeros(len(idx))
        else:
            action, log_prob = agent.policy.sample(obs, rng)
        value = agent.critic(obs)
        res = env.step(xa, t, fv[idx], on[idx], action)
        xn = res.next_state
        bad = ~np.all(np.isfinite(xn), axis=1)
        if np.any(bad):
            i = idx[np.flatnonzero(bad)[0]]
            raise SimulationError(f"non-finite state in episode {i} at t={t:.1f}s "
                                  f"from state {x[i].tolist()} with action "
                                  f"{action[np.flatnonzero(bad)[0]].tolist()}")
        exited = out_of_room(xn, env.target, cfg.episode)
        reward = res.terms.sum(axis=1) + np.where(exited, cfg.reward.out_of_bounds_penalty, 0.0)
        ok = success_mask(xn, env.target, cfg.episode)
        succeeded = ok & ~exited & terminate_on_success
        last = k + 1 == n_max
        done = exited | succeeded | last

        rows.append(dict(env=idx, time=np.full(len(idx), t), state=xa, raw_obs=raw, obs=obs,
                         action=action, log_prob=log_prob, value=value, reward=reward,
                         terms=res.terms, reference=res.reference, achieved=res.achieved,
                         cmd=res.commanded_wrench, realized=res.realized_wrench,
                         valves=res.valve_open, next_state=xn, success=ok,
                         disturbance=kicked[idx]))
        x[idx], fv[idx], on[idx] = xn, res.filter_value, res.output_on
        finished = idx[done]
        outcome[idx[succeeded]] = SUCCESS
        outcome[idx[exited]] = EXITED
        outcome[idx[done & ~exited & ~succeeded]] = TIMEOUT
        sig, dlt = errors_array(xn[succeeded], env.target)
        end_state[idx[succeeded]] = np.column_stack([np.full(len(sig), t + dt), sig, dlt])
        active[finished] = False

    if rows:
        env_id = np.concatenate([r["env"] for r in rows])
        order = np.argsort(env_id, kind="stable")
        steps = {k: np.concatenate([r[k] for r in rows])[order] for k in rows[0] if k != "env"}
        counts = np.bincount(env_id, minlength=n_env)
    else:
        steps, counts = {}, np.zeros(n_env, dtype=int)

    term_v = np.zeros(n_env)
    hold_r = np.zeros(n_env)
    hit = np.flatnonzero(~np.isnan(end_state[:, 0]))
    if len(hit):
        d, u = hold_value(end_state[hit, 1], end_state[hit, 2], end_state[hit, 0], time_limit, dt,
                          cfg.ppo.gamma, cfg.reward)
        term_v[hit], hold_r[hit] = d, u
    return Rollout(counts, outcome, term_v, hold_r, np.array(x0, dtype=float, ndmin=2), steps)


def make_agent(cfg: RunConfig, rng) -> Agent:
    net = cfg.network
    return Agent.create(OBS_DIM, ACT_DIM, cfg.ppo, rng, actor_hidden=net.actor_hidden,
                        critic_hidden=net.critic_hidden,
                        initial_log_std=float(np.log(net.initial_std)))


def run_episode(agent: Agent, cfg: RunConfig, mode: str = "train", seed=0, initial_state=None,
                schedule: DisturbanceSchedule | None = None, duration: float | None = None):
    """One episode.  ``train`` samples actions and stops at success; ``test``
    uses the mean action and runs the full duration."""
    if mode not in ("train", "test"):
        raise ValueError("mode must be 'train' or 'test'")
    rng = np.random.default_rng(seed)
    ep = cfg.episode
    if initial_state is None:
        initial_state = sample_initial_states(1, ep, rng)[0]
    elif isinstance(initial_state, PlatformState):
        initial_state = initial_state.as_array()
    limit = duration or (ep.train_time_limit if mode == "train" else ep.test_time_limit)
    return rollout(PlatformEnv(cfg), agent, np.asarray(initial_state)[None, :], limit, rng,
                   deterministic=mode == "test", terminate_on_success=mode == "train",
                   schedule=schedule)


def _streams(seed: int):
    init_ss, ic_ss, noise_ss = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(init_ss), np.random.default_rng(ic_ss),
            np.random.default_rng(noise_ss))


def collect_batch(env: PlatformEnv, agent: Agent, n_episodes: int, ic_rng, noise_rng) -> Rollout:
    x0 = sample_initial_states(n_episodes, env.cfg.episode, ic_rng)
    return rollout(env, agent, x0, env.cfg.episode.train_time_limit, noise_rng)


@dataclass
class TrainResult:
    agent: Agent
    log: list
    config: RunConfig
    seed: int


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def train(cfg: RunConfig, seed: int = 0, out_dir=None, checkpoint_every: int = 5,
          progress=None) -> TrainResult:
    """Collect a batch, update, log; repeat until the episode or update cap."""
    from .checkpoint import save_checkpoint

    init_rng, ic_rng, noise_rng = _streams(seed)
    agent = make_agent(cfg, init_rng)
    env = PlatformEnv(cfg)
    pc = cfg.ppo
    n_updates = math.ceil(pc.max_episodes / pc.batch_episodes)
    if pc.max_updates is not None:
        n_updates = min(n_updates, pc.max_updates)
    log_rows = []
    best_abs = 0.0
    log_fh = writer = None
    ckpt = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "train_log.csv"), "w", newline="")
        writer = csv.writer(log_fh)
        writer.writerow(TRAIN_LOG_COLUMNS)
        ckpt = os.path.join(out_dir, "checkpoint.fcp")
    meta = {"seed": seed, "mode": cfg.reward.mode, "config_hash": cfg.digest()}
    try:
        for u in range(n_updates):
            n_ep = min(pc.batch_episodes, pc.max_episodes - agent.episodes)
            ro = collect_batch(env, agent, n_ep, ic_rng, noise_rng)
            batch = ro.to_batch()
            diag = update(batch, agent, pc, noise_rng)
            if len(batch):
                agent.obs_normalizer.update(ro.steps["raw_obs"])
            agent.episodes += n_ep
            mean_ret = float(np.mean(ro.episode_returns()))
            best_abs = max(best_abs, abs(mean_ret))
            row = dict(update=agent.updates, episodes=agent.episodes, mean_return=mean_ret,
                       normalized_reward=mean_ret / best_abs if best_abs > 0 else 0.0,
                       kl=diag["kl"], epsilon=diag["epsilon"], actor_lr=diag["actor_lr"],
                       value_loss=diag["value_loss"], objective=diag["objective"],
                       success_rate=float(np.mean(ro.outcome == SUCCESS)),
                       exit_rate=float(np.mean(ro.outcome == EXITED)),
                       mean_length=float(np.mean(ro.counts)))
            log_rows.append(row)
            if writer is not None:
                writer.writerow([_fmt(row[c]) for c in TRAIN_LOG_COLUMNS])
                log_fh.flush()
                if (u + 1) % checkpoint_every == 0 or u + 1 == n_updates:
                    save_checkpoint(ckpt, agent, cfg, meta)
            if progress is not None:
                progress(row)
    finally:
        if log_fh is not None:
            log_fh.close()
    return TrainResult(agent, log_rows, cfg, seed)


# ---------------------------------------------------------------- evaluation

@dataclass
class WindowMetrics:
    start: float
    end: float
    peak_excursion: float           # m, largest position error in the window
    time_to_success: float          # s from window start until success holds for good; nan if never
    steady_position_error: float    # m, mean over the last ``settle`` seconds
    steady_angle_error: float       # rad, same window
    recovered: bool                 # success holds at the last step before the next impulse


def window_metrics(log: dict, schedule: DisturbanceSchedule, settle: float = 5.0,
                   target=None) -> list:
    """Per-disturbance metrics computed from the step log alone.

    Windows run from each impulse to the next one (the last to the end of
    the run); the first window starts at zero when the first impulse is
    later than that.
    """
    t = np.asarray(log["time"], dtype=float)
    target = np.zeros(6) if target is None else np.asarray(target, dtype=float)
    states = np.column_stack([log[k] for k in ("x", "y", "vx", "vy", "theta", "omega")])
    sigma, delta = errors_array(states, target)
    ok = np.asarray(log["success"], dtype=bool)
    dt = t[1] - t[0] if len(t) > 1 else 0.1
    end_time = float(t[-1] + dt) if len(t) else schedule.duration
    starts = [e.time for e in schedule.events]
    if not starts or starts[0] > 0:
        starts = [0.0] + starts
    bounds = starts + [end_time]
    out = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        m = (t >= a - 1e-9) & (t < b - 1e-9)
        if not np.any(m):
            continue
        tail = m & (t >= b - settle - 1e-9)
        rows = np.flatnonzero(m)
        # settling time: start of the unbroken success run that lasts to the window end
        fails = rows[~ok[rows]]
        recovered = bool(ok[rows[-1]])
        first = rows[0] if not len(fails) else fails[-1] + 1
        tts = float(t[first] - a) if recovered else float("nan")
        out.append(WindowMetrics(a, b, float(sigma[m].max()), tts, float(sigma[tail].mean()),
                                 float(delta[tail].mean()), recovered))
    return out


def rollout_log(ro: Rollout, i: int, ep_cfg: EpisodeConfig, target) -> dict:
    """Per-step record of one episode in the column layout of the run log."""
    ep = ro.episode(i)
    n = len(ep["time"])
    s = ep["state"]
    log = {"time": ep["time"] + 0.0}
    for j, k in enumerate(("x", "y", "vx", "vy", "theta", "omega")):
        log[k] = s[:, j]
    for j, k in enumerate(("cmd_fx", "cmd_fy", "cmd_m")):
        log[k] = ep["cmd"][:, j]
    for j, k in enumerate(("real_fx", "real_fy", "real_m")):
        log[k] = ep["realized"][:, j]
    for j in range(ep["valves"].shape[1] if n else 8):
        log[f"valve{j}"] = ep["valves"][:, j] if n else np.zeros(0)
    for j, k in enumerate(("ref_ax", "ref_ay", "ref_alpha")):
        log[k] = ep["reference"][:, j]
    for j, k in enumerate(("tracking", "effort", "bonus_rot", "bonus_pos")):
        log[k] = ep["terms"][:, j]
    log["reward"] = ep["reward"]
    log["success"] = success_mask(s, target, ep_cfg) if n else np.zeros(0, dtype=bool)
    log["disturbance"] = ep["disturbance"]
    return log


def evaluate(agent: Agent, cfg: RunConfig, schedule: DisturbanceSchedule | None = None,
             duration: float | None = None, initial_state=None, out_dir=None):
    """Deterministic run from ``initial_state`` (default: the target) with the
    scheduled impulses.  Returns ``(log, metrics)``."""
    schedule = schedule or DisturbanceSchedule.default()
    duration = duration or schedule.duration
    x0 = np.asarray(cfg.episode.target if initial_state is None else initial_state, dtype=float)
    env = PlatformEnv(cfg)
    ro = rollout(env, agent, x0[None, :], duration, np.random.default_rng(0), deterministic=True,
                 terminate_on_success=False, schedule=schedule)
    log = rollout_log(ro, 0, cfg.episode, env.target)
    metrics = window_metrics(log, schedule, target=env.target)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_log_csv(os.path.join(out_dir, "eval_log.csv"), log)
        with open(os.path.join(out_dir, "eval_metrics.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            cols = ["start", "end", "peak_excursion", "time_to_success",
                    "steady_position_error", "steady_angle_error", "recovered"]
            w.writerow(cols)
            for m in metrics:
                w.writerow([_fmt(getattr(m, c)) if c != "recovered" else int(m.recovered)
                            for c in cols])
    return log, metrics


def write_log_csv(path, log: dict):
    n = len(log["time"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STEP_LOG_COLUMNS)
        for i in range(n):
            w.writerow([int(log[c][i]) if c in ("success", "disturbance") else repr(float(log[c][i]))
                        for c in STEP_LOG_COLUMNS])


def read_log_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) for r in rows]) for c in STEP_LOG_COLUMNS}
