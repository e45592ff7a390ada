"""Property suites with independent oracles.

Each check returns a :class:`CheckResult`; ``run_suites`` groups them the way
the ``verify`` command exposes them.  Oracles deliberately avoid the code
paths they check: closed-form kinematics via Fresnel integrals, MPC via a
stacked least-squares problem built from a matrix exponential, PWPF via a
fine fixed-step boolean simulation, reward via scalar arithmetic.
"""
from __future__ import annotations

import csv
import math
import os
import tempfile
import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.special import fresnel

from . import dynamics, mpc, neural, ppo, pwpf, reward
from .config import EpisodeConfig, RunConfig


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _timed(name, fn) -> CheckResult:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:            # a crashing check is a failing check
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t0)


# ------------------------------------------------------------------ dynamics

def _fresnel_cs(a, b, c, t):
    """(int_0^t cos(a s^2 + b s + c) ds, int_0^t sin(...) ds)."""
    if a == 0.0:
        if b == 0.0:
            return t * math.cos(c), t * math.sin(c)
        return ((math.sin(b * t + c) - math.sin(c)) / b,
                -(math.cos(b * t + c) - math.cos(c)) / b)
    sign = 1.0
    if a < 0:
        a, b, c, sign = -a, -b, -c, -1.0
    k = math.sqrt(2.0 * a / math.pi)
    c2 = c - b * b / (4.0 * a)
    s1, c1 = fresnel(k * (t + b / (2.0 * a)))
    s0, c0 = fresnel(k * b / (2.0 * a))
    big_c, big_s = c1 - c0, s1 - s0
    return ((big_c * math.cos(c2) - big_s * math.sin(c2)) / k,
            sign * (big_s * math.cos(c2) + big_c * math.sin(c2)) / k)


def constant_wrench_state(x0, wrench, mass, inertia, t):
    """Exact state after ``t`` seconds of a constant body wrench."""
    x0 = np.asarray(x0, dtype=float)
    fx, fy, torque = wrench
    alpha = torque / inertia
    th0, w0 = x0[4], x0[5]
    a, b, c = 0.5 * alpha, w0, th0
    ic, isn = _fresnel_cs(a, b, c, t)
    phi_t = a * t * t + b * t + c
    # first moments int_0^t s cos(phi) ds and int_0^t s sin(phi) ds
    if alpha != 0.0:
        mc = (math.sin(phi_t) - math.sin(c)) / alpha - (w0 / alpha) * ic
        ms = -(math.cos(phi_t) - math.cos(c)) / alpha - (w0 / alpha) * isn
    elif w0 != 0.0:
        mc = t * math.sin(phi_t) / w0 + (math.cos(phi_t) - math.cos(c)) / w0 ** 2
        ms = -t * math.cos(phi_t) / w0 + (math.sin(phi_t) - math.sin(c)) / w0 ** 2
    else:
        mc, ms = 0.5 * t * t * math.cos(c), 0.5 * t * t * math.sin(c)
    dv = np.array([ic * fx - isn * fy, isn * fx + ic * fy]) / mass
    moment = np.array([mc * fx - ms * fy, ms * fx + mc * fy]) / mass
    r = x0[0:2] + x0[2:4] * t + t * dv - moment
    return np.array([r[0], r[1], x0[2] + dv[0], x0[3] + dv[1], phi_t, w0 + alpha * t])


def check_drift_conservation(n_steps=1000, seed=0):
    rng = np.random.default_rng(seed)
    p = dynamics.PlatformParams()
    x0 = np.column_stack([rng.uniform(-2, 2, (10, 2)), rng.normal(0, 0.3, (10, 2)),
                          rng.uniform(-3, 3, 10), rng.normal(0, 1, 10)])
    x = x0.copy()
    zero = np.zeros((10, 3))
    for _ in range(n_steps):
        x = dynamics.rk4_array(x, zero, p.mass, p.inertia, p.dt)
    mom0 = np.column_stack([p.mass * x0[:, 2:4], p.inertia * x0[:, 5]])
    mom1 = np.column_stack([p.mass * x[:, 2:4], p.inertia * x[:, 5]])
    worst = float(np.max(np.abs(mom1 - mom0) / np.abs(mom0)))
    return worst <= 1e-9, f"max relative momentum drift {worst:.2e} over {n_steps} steps"


def check_constant_wrench(seed=0, duration=10.0, h=0.01, trials=12):
    rng = np.random.default_rng(seed)
    p = dynamics.PlatformParams()
    n = int(round(duration / h))
    x0 = np.column_stack([rng.uniform(-1, 1, (trials, 2)), rng.uniform(-0.1, 0.1, (trials, 2)),
                          rng.uniform(-np.pi, np.pi, trials), rng.uniform(-0.3, 0.3, trials)])
    # full, small and zero torque so every closed-form branch is exercised
    torque_scale = np.array([(1.0, 0.1, 0.0)[i % 3] for i in range(trials)])
    u = np.column_stack([rng.uniform(-1, 1, (trials, 2)),
                         torque_scale * rng.uniform(-0.5, 0.5, trials)])
    x = x0.copy()
    for _ in range(n):
        x = dynamics.rk4_array(x, u, p.mass, p.inertia, h)
    worst = 0.0
    for xi, x0i, ui in zip(x, x0, u):
        exact = constant_wrench_state(x0i, ui, p.mass, p.inertia, duration)
        worst = max(worst, float(np.max(np.abs(xi - exact)) / np.max(np.abs(exact - x0i))))
    return worst <= 1e-8, f"max relative deviation from closed form {worst:.2e} ({n} RK4 steps)"


def check_rotation_matrices(n=10_000, seed=0):
    rng = np.random.default_rng(seed)
    angles = rng.uniform(-1e3, 1e3, n)
    orth = det = 0.0
    for a in angles:
        r = dynamics.rotation_matrix(a)
        orth = max(orth, float(np.max(np.abs(r.T @ r - np.eye(2)))))
        det = max(det, abs(r[0, 0] * r[1, 1] - r[0, 1] * r[1, 0] - 1.0))
    ok = orth <= 1e-12 and det <= 1e-12
    return ok, f"max |R'R - I| {orth:.1e}, max |det R - 1| {det:.1e} over {n} angles"


def check_allocation(seed=0):
    """Attainable wrenches reproduce exactly with duties in [0, 1]; others raise."""
    rng = np.random.default_rng(seed)
    layout = dynamics.ThrusterLayout()
    worst = 0.0
    for _ in range(500):
        w = rng.uniform(-1, 1, 3) * layout.box_limits
        duty = dynamics.allocate(dynamics.BodyWrench(w[:2], w[2]), layout)
        if np.any(duty < -1e-12) or np.any(duty > 1 + 1e-12):
            return False, "duty outside [0, 1]"
        worst = max(worst, float(np.max(np.abs(layout.wrench_map @ duty - w))))
    try:
        dynamics.allocate(dynamics.BodyWrench(np.array([10.0, 0.0]), 0.0), layout)
        return False, "unattainable wrench was accepted"
    except dynamics.SaturationError:
        pass
    return worst < 1e-10, f"max wrench reconstruction error {worst:.1e} on 500 wrenches"


# ----------------------------------------------------------------------- mpc

def mpc_lstsq_oracle(x0, params, cfg: mpc.MpcConfig, weights: mpc.MpcWeights):
    """Unconstrained optimum from one stacked least-squares problem.

    Discretization by matrix exponential of the augmented system, prediction
    by simulating unit input impulses.
    """
    th = x0[4]
    a = np.zeros((6, 6))
    a[0, 2] = a[1, 3] = a[4, 5] = 1.0
    b = np.zeros((6, 3))
    c, s = math.cos(th), math.sin(th)
    b[2:4, 0:2] = np.array([[c, -s], [s, c]]) / params.mass
    b[5, 2] = 1.0 / params.inertia
    h = cfg.step
    n = cfg.n_steps
    aug = np.zeros((9, 9))
    aug[:6, :6], aug[:6, 6:] = a, b
    e = expm(aug * h)
    ad, bd = e[:6, :6], e[:6, 6:]
    nu = 3 * n
    # column j of the response matrix: stacked states after a unit impulse in input j
    resp = np.zeros((6 * n, nu))
    for j in range(nu):
        u = np.zeros(nu)
        u[j] = 1.0
        x = np.zeros(6)
        for k in range(n):
            x = ad @ x + bd @ u[3 * k:3 * k + 3]
            resp[6 * k:6 * k + 6, j] = x
    free = np.zeros(6 * n)
    x = np.asarray(x0, dtype=float).copy()
    for k in range(n):
        x = ad @ x
        free[6 * k:6 * k + 6] = x
    target = np.tile(cfg.target, n)
    wq = np.sqrt(h * np.diag(weights.omega))
    wr = np.sqrt(h * np.diag(weights.rho))
    lhs = np.vstack([np.tile(wq, n)[:, None] * resp, np.diag(np.tile(wr, n))])
    rhs = np.concatenate([np.tile(wq, n) * (target - free), np.zeros(nu)])
    sol, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    return sol.reshape(n, 3)


def check_mpc_oracle(n_states=50, seed=0):
    rng = np.random.default_rng(seed)
    params = dynamics.PlatformParams()
    cfg, w = mpc.MpcConfig(), mpc.MpcWeights()
    worst = 0.0
    for _ in range(n_states):
        x0 = np.concatenate([rng.uniform(-2, 2, 1), rng.uniform(-1.2, 1.2, 1), rng.normal(0, 0.2, 2),
                             rng.uniform(-np.pi, np.pi, 1), rng.normal(0, 0.5, 1)])
        model = mpc.discretize(mpc.linearize(x0, params), cfg.step)
        got = mpc.solve(model, x0, cfg, w, enforce_bounds=False).inputs
        ref = mpc_lstsq_oracle(x0, params, cfg, w)
        worst = max(worst, float(np.linalg.norm(got - ref) / np.linalg.norm(ref)))
    return worst <= 1e-6, f"max relative input error {worst:.2e} over {n_states} states (N=100)"


def check_mpc_single_stage(seed=0):
    rng = np.random.default_rng(seed)
    params = dynamics.PlatformParams()
    cfg = mpc.MpcConfig(horizon=0.1)
    w = mpc.MpcWeights()
    worst = 0.0
    for _ in range(20):
        x0 = rng.normal(0, 1, 6)
        model = mpc.discretize(mpc.linearize(x0, params), cfg.step)
        got = mpc.solve(model, x0, cfg, w, enforce_bounds=False).inputs[0]
        x0w = x0.copy()
        x0w[4] = dynamics.wrap_angle(x0w[4])
        ad, bd = model.Ad, model.Bd
        u = -np.linalg.solve(bd.T @ w.omega @ bd + w.rho, bd.T @ w.omega @ (ad @ x0w - cfg.target))
        worst = max(worst, float(np.linalg.norm(got - u) / max(np.linalg.norm(u), 1e-300)))
    return worst <= 1e-9, f"max relative error vs single-stage minimizer {worst:.1e}"


def check_mpc_at_target(seed=0):
    rng = np.random.default_rng(seed)
    params = dynamics.PlatformParams()
    worst = 0.0
    for _ in range(10):
        target = np.concatenate([rng.uniform(-1, 1, 2), np.zeros(2), rng.uniform(-3, 3, 1), [0.0]])
        cfg = mpc.MpcConfig(target=target)
        model = mpc.discretize(mpc.linearize(target, params), cfg.step)
        sol = mpc.solve(model, target, cfg, mpc.MpcWeights())
        worst = max(worst, float(np.max(np.abs(sol.inputs))))
    return worst == 0.0, f"max |u| at the target {worst:.1e}"


def check_mpc_bounds(seed=0):
    """Input box respected exactly; fast reference generator equals the full solve."""
    rng = np.random.default_rng(seed)
    run = RunConfig()
    gen = mpc.ReferenceGenerator(run.platform, run.mpc, run.mpc_weights)
    xs = np.column_stack([rng.uniform(-2.4, 2.4, 60), rng.uniform(-1.4, 1.4, 60),
                          rng.normal(0, 0.4, (60, 2)), rng.uniform(-np.pi, np.pi, 60),
                          rng.normal(0, 1.5, 60)])
    fast = gen.first_derivative(xs)
    worst = viol = 0.0
    lo, hi = run.mpc.input_bounds[:, 0], run.mpc.input_bounds[:, 1]
    for x, f in zip(xs, fast):
        sol = mpc.solve(mpc.discretize(mpc.linearize(x, run.platform), 0.1), x, run.mpc,
                        run.mpc_weights)
        viol = max(viol, float(np.max(np.maximum(sol.inputs - hi, lo - sol.inputs))))
        worst = max(worst, float(np.max(np.abs(sol.predicted_state_derivatives[0] - f))))
    return viol <= 1e-12 and worst <= 1e-9, (f"box violation {max(viol, 0):.1e}, "
                                             f"fast vs full reference {worst:.1e}")


def dump_mpc_trajectory(path, seed=0):
    """Solved horizon from a random start as CSV: time, state, input, derivative."""
    rng = np.random.default_rng(seed)
    run = RunConfig()
    x0 = np.array([rng.uniform(-1.5, 1.5), rng.uniform(-1, 1), 0.02, -0.01,
                   rng.uniform(-np.pi, np.pi), 0.01])
    sol = mpc.solve(mpc.discretize(mpc.linearize(x0, run.platform), run.mpc.step), x0, run.mpc,
                    run.mpc_weights)
    h = run.mpc.step
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["time", "x", "y", "vx", "vy", "theta", "omega", "fx", "fy", "m",
                     "dx", "dy", "dvx", "dvy", "dtheta", "domega"])
        for k in range(len(sol.inputs)):
            wr.writerow([repr(k * h), *map(repr, sol.predicted_states[k].tolist()),
                         *map(repr, sol.inputs[k].tolist()),
                         *map(repr, sol.predicted_state_derivatives[k].tolist())])
    return path


# ---------------------------------------------------------------------- pwpf

def pwpf_fine_duty(cfg: pwpf.PwpfConfig, command, dt=1e-4, duration=120.0, settle=20.0):
    """Boolean fixed-step simulation: exact filter update per step, trigger
    evaluated once per step.  ``command`` may be an array of amplitudes."""
    command = np.asarray(command, dtype=float)
    decay = math.exp(-dt / cfg.filter_time_constant)
    x = np.zeros(command.shape)
    on = np.zeros(command.shape, dtype=bool)
    n_settle = int(round(settle / dt))
    n_total = int(round(duration / dt))
    on_count = np.zeros(command.shape)
    for k in range(n_total):
        drive = cfg.filter_gain * (command - on)
        x = drive + (x - drive) * decay
        on = (x >= cfg.on_threshold) | (on & (x > cfg.off_threshold))
        if k >= n_settle:
            on_count += on
    duty = on_count / (n_total - n_settle)
    return float(duty) if duty.ndim == 0 else duty


def pwpf_sweep_commands(n=20):
    return np.linspace(0.05, 1.0, n)


def check_pwpf_dead_zone():
    cfg = pwpf.PwpfConfig()
    x, on = np.zeros(3), np.zeros(3, dtype=bool)
    commands = np.array([0.0, 0.5 * cfg.dead_zone, 0.999 * cfg.dead_zone])
    fired = 0.0
    for _ in range(6000):
        x, on, frac = pwpf.pwpf_step_array(x, on, commands, cfg, 0.01)
        fired += float(frac.sum())
    return fired == 0.0, f"open time with commands below {cfg.dead_zone:.3f}: {fired:.1f} steps"


def check_pwpf_hysteresis(seed=0):
    cfg = pwpf.PwpfConfig()
    rng = np.random.default_rng(seed)
    inside = rng.uniform(cfg.off_threshold, cfg.on_threshold, 1000)
    inside = inside[(inside > cfg.off_threshold) & (inside < cfg.on_threshold)]
    for prev in (False, True):
        if np.any(pwpf.trigger(inside, prev, cfg) != prev):
            return False, "output changed strictly between thresholds"
    if not (pwpf.trigger(cfg.on_threshold, False, cfg) and not pwpf.trigger(cfg.off_threshold, True, cfg)):
        return False, "trigger does not switch at the thresholds"
    # along a fine trajectory the output only flips where the filter sits at a threshold
    x, on = 0.0, False
    decay = math.exp(-1e-3 / cfg.filter_time_constant)
    for _ in range(20_000):
        drive = cfg.filter_gain * (0.3 - (1.0 if on else 0.0))
        x = drive + (x - drive) * decay
        new = bool(pwpf.trigger(x, on, cfg))
        if new != on and cfg.off_threshold < x < cfg.on_threshold:
            return False, f"switched at interior filter value {x}"
        on = new
    return True, f"{len(inside)} interior filter values held both output states"


def check_pwpf_duty(n=20):
    cfg = pwpf.PwpfConfig()
    commands = pwpf_sweep_commands(n)
    fast = pwpf.duty_sweep(cfg, commands)
    oracle = pwpf_fine_duty(cfg, commands)
    err = float(np.max(np.abs(fast - oracle)))
    monotone = bool(np.all(np.diff(fast) >= -1e-12))
    return err <= 0.02 and monotone, (f"max |duty - fine oracle| {err:.2e} over {n} amplitudes, "
                                      f"monotone={monotone}")


def dump_pwpf_sweep(path, n=20):
    cfg = pwpf.PwpfConfig()
    commands = pwpf_sweep_commands(n)
    duty = pwpf.duty_sweep(cfg, commands)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["command", "duty"])
        for c, d in zip(commands, duty):
            wr.writerow([repr(float(c)), repr(float(d))])
    return path


# ----------------------------------------------------------------------- ppo

def _rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def _fd_grad(f, arrays, step=1e-5):
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = arr[i]
            arr[i] = old + step
            fp = f()
            arr[i] = old - step
            fm = f()
            arr[i] = old
            g[i] = (fp - fm) / (2 * step)
        out.append(g)
    return out


def check_gradients(trials=20, seed=0):
    rng = np.random.default_rng(seed)
    worst = {"mlp": 0.0, "surrogate": 0.0, "value": 0.0}
    for _ in range(trials):
        sizes = [int(rng.integers(2, 5)), int(rng.integers(2, 6)), int(rng.integers(2, 5)),
                 int(rng.integers(1, 4))]
        net = neural.Mlp(sizes, rng)
        for p in net.params:
            p += rng.normal(0, 0.1, p.shape)
        x = rng.normal(size=(5, sizes[0]))
        proj = rng.normal(size=(5, sizes[-1]))
        out, cache = net.forward(x)
        analytic = net.backward(cache, proj)
        numeric = _fd_grad(lambda: float(np.sum(net(x) * proj)), net.params)
        worst["mlp"] = max(worst["mlp"], max(_rel_err(a, b) for a, b in zip(analytic, numeric)))

        obs_dim, act_dim = sizes[0], int(rng.integers(1, 4))
        policy = neural.GaussianPolicy(neural.Mlp([obs_dim, 4, act_dim], rng),
                                       rng.normal(-0.5, 0.2, act_dim))
        obs = rng.normal(size=(8, obs_dim))
        acts = policy.mean(obs) + rng.normal(0, 0.5, (8, act_dim))
        old_lp = policy.log_prob(obs, acts) + rng.normal(0, 0.1, 8)
        adv = rng.normal(size=8)
        eps = 0.2
        _, analytic = ppo.surrogate_objective(policy, obs, acts, old_lp, adv, eps)
        numeric = _fd_grad(lambda: ppo.surrogate_objective(policy, obs, acts, old_lp, adv, eps)[0],
                           policy.params)
        worst["surrogate"] = max(worst["surrogate"],
                                 max(_rel_err(a, b) for a, b in zip(analytic, numeric)))

        critic = ppo.ValueFunction(neural.Mlp([obs_dim, 5, 3, 1], rng), rng.normal(), 1.5)
        returns = rng.normal(size=8)
        _, analytic = ppo.value_objective(critic, obs, returns)
        numeric = _fd_grad(lambda: ppo.value_objective(critic, obs, returns)[0], critic.params)
        worst["value"] = max(worst["value"], max(_rel_err(a, b) for a, b in zip(analytic, numeric)))
    ok = all(v < 1e-5 for v in worst.values())
    return ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" ({trials} trials each)"


def _clip_oracle(p, a, eps):
    """Scalar piecewise form of min(p A, clip(p, 1-eps, 1+eps) A) and its slope in p."""
    if a >= 0:
        if p > 1 + eps:
            return (1 + eps) * a, 0.0
        return p * a, a
    if p < 1 - eps:
        return (1 - eps) * a, 0.0
    return p * a, a


def check_clip_semantics():
    cases = 0
    for eps in (0.05, 0.2, 0.4):
        lo, hi = 1.0 - eps, 1.0 + eps
        ratios = [0.0, 0.5 * lo, np.nextafter(lo, 0), lo, np.nextafter(lo, 2), 1.0,
                  np.nextafter(hi, 0), hi, np.nextafter(hi, 3), 2 * hi, 10.0]
        for p in ratios:
            c = float(ppo.clip_ratio(p, eps))
            expect = min(max(p, lo), hi)
            if c != expect:
                return False, f"clip({p}, {eps}) = {c}, expected {expect}"
            for a in (-2.0, -0.5, 0.0, 0.5, 2.0):
                val, slope = _clip_oracle(p, a, eps)
                got = min(p * a, c * a)
                if got != val:
                    return False, f"objective at p={p}, A={a}, eps={eps}: {got} vs {val}"
                # gradient through the surrogate: one sample, zero-mean policy
                if p > 0:
                    policy = neural.GaussianPolicy(neural.Mlp([1, 1], 0, output_scale=0.0),
                                                   np.zeros(1))
                    action = np.array([[0.3]])
                    lp = float(policy.log_prob(np.zeros((1, 1)), action)[0])
                    old = lp - math.log(p)
                    obj, grads = ppo.surrogate_objective(policy, np.zeros((1, 1)), action,
                                                         np.array([old]), np.array([a]), eps)
                    ratio = math.exp(lp - old)
                    gnorm = sum(float(np.abs(g).sum()) for g in grads)
                    ref_val, ref_slope = _clip_oracle(ratio, a, eps)
                    if abs(obj - ref_val) > 1e-12 * max(1.0, abs(ref_val)):
                        return False, f"surrogate value mismatch at p={p}, A={a}"
                    if (ref_slope == 0.0) != (gnorm == 0.0):
                        return False, f"gradient gating wrong at p={p}, A={a}, eps={eps}"
                cases += 1
    return True, f"{cases} ratio/advantage/epsilon cases including 1-eps and 1+eps exactly"


def check_kl_monte_carlo(n=100_000, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        d = int(rng.integers(1, 4))
        mu_p, mu_q = rng.normal(0, 0.5, d), rng.normal(0, 0.5, d)
        ls_p, ls_q = rng.normal(-0.5, 0.3, d), rng.normal(-0.5, 0.3, d)
        closed = float(neural.gaussian_kl(mu_p, ls_p, mu_q, ls_q))
        x = mu_p + np.exp(ls_p) * rng.standard_normal((n, d))

        def logpdf(x, mu, ls):
            z = (x - mu) / np.exp(ls)
            return -0.5 * np.sum(z * z + 2 * ls + math.log(2 * math.pi), axis=1)

        samples = logpdf(x, mu_p, ls_p) - logpdf(x, mu_q, ls_q)
        se = samples.std(ddof=1) / math.sqrt(n)
        worst = max(worst, abs(samples.mean() - closed) / se)
    return worst <= 3.0, f"worst |MC - closed form| = {worst:.2f} standard errors"


def synthetic_kl_run(n_updates=60, seed=0, target_kl=0.001, batch=2048):
    """Single-step quadratic-reward task; returns the measured KL per update."""
    rng = np.random.default_rng(seed)
    cfg = ppo.PpoConfig(target_kl=target_kl, minibatch_size=512, epochs=10)
    obs_dim, act_dim = 4, 2
    agent = ppo.Agent.create(obs_dim, act_dim, cfg, rng, actor_hidden=(32, 32),
                             critic_hidden=(32,))
    w_true = rng.normal(0, 0.5, (obs_dim, act_dim))
    kls = []
    for _ in range(n_updates):
        obs = rng.normal(size=(batch, obs_dim))
        act, lp = agent.policy.sample(obs, rng)
        r = -np.sum((act - np.tanh(obs @ w_true)) ** 2, axis=1)
        tb = ppo.TrajectoryBatch(obs, act, r, lp, agent.critic(obs), np.ones(batch, dtype=bool),
                                 np.arange(batch))
        kls.append(ppo.update(tb, agent, cfg, rng)["kl"])
    return np.array(kls), cfg


def check_kl_band(n_updates=60, seed=0):
    kls, cfg = synthetic_kl_run(n_updates, seed)
    tail = kls[10:]
    in_band = (tail >= cfg.kl_low * cfg.target_kl) & (tail <= cfg.kl_high * cfg.target_kl)
    frac = float(np.mean(in_band))
    return frac >= 0.8, f"{frac:.0%} of updates 11-{n_updates} inside [KL/2, 2 KL]"


# -------------------------------------------------------------------- reward

def _reward_oracle(ach, ref, act, sigma, delta, t):
    m = (1.0, 10.0, 5.0)
    p = (10.0, 10.0, 10.0)
    k = 1.0 + 0.5 * t
    tracking = 0.0
    effort = 0.0
    for i in range(3):
        tracking -= m[i] * (ach[i] - ref[i]) ** 2
        effort -= p[i] * act[i] ** 2
    rot = 100.0 / (1.0 + math.exp(k * delta))
    pos = 10.0 / (1.0 + math.exp(k * sigma))
    return tracking, effort, rot, pos


def check_reward_values(seed=0):
    cfg = reward.RewardConfig()
    zero = reward.reward(np.zeros(3), np.zeros(3), np.zeros(3), reward.StabilizationErrors(0.0, 0.0),
                         0.0, cfg)
    if zero != 55.0:
        return False, f"zero-error reward {zero!r}, expected exactly 55"
    rng = np.random.default_rng(seed)
    worst = 0.0
    guided, only = cfg, reward.RewardConfig(mode="ppo_only")
    for _ in range(10):
        ach, ref, act = rng.normal(0, 0.3, 3), rng.normal(0, 0.3, 3), rng.uniform(-1, 1, 3)
        sigma, delta, t = rng.uniform(0, 2), rng.uniform(0, math.pi), rng.uniform(0, 60)
        got = reward.reward_terms(ach, ref, act, sigma, delta, t, cfg)
        want = _reward_oracle(ach, ref, act, sigma, delta, t)
        worst = max(worst, max(abs(float(g) - w) / max(1.0, abs(w)) for g, w in zip(got, want)))
        err = reward.StabilizationErrors(sigma, delta)
        if reward.reward(ach, ref, act, err, t, only) != reward.reward(ach, np.zeros(3), act, err, t,
                                                                      guided):
            return False, "ppo_only differs from guided reward with zero reference"
    return worst <= 1e-12, f"zero-error reward 55 exactly; max term error {worst:.1e}"


def check_success_predicate():
    from .harness import success_check

    ep = EpisodeConfig()
    deg = math.pi / 180
    cases = [
        (np.zeros(6), True),
        (np.array([0.049, 0, 0, 0, 0, 0]), True),
        (np.array([0.051, 0, 0, 0, 0, 0]), False),
        (np.array([0.05, 0, 0, 0, 0, 0]), False),          # strict on position
        (np.array([0, 0, 0.1, 0, 0, 0]), True),
        (np.array([0, 0, 0.0707, 0.0707, 0, 0]), True),
        (np.array([0, 0, 0.1001, 0, 0, 0]), False),
        (np.array([0, 0, 0, 0, 4.99 * deg, 0]), True),
        (np.array([0, 0, 0, 0, -4.99 * deg, 0]), True),
        (np.array([0, 0, 0, 0, 6 * deg, 0]), False),
        (np.array([0, 0, 0, 0, 5.01 * deg, 0]), False),
        (np.array([0, 0, 0, 0, 2 * math.pi, 0]), True),     # heading wraps
        (np.array([0, 0, 0, 0, 0, 0.99 * deg]), True),
        (np.array([0, 0, 0, 0, 0, -1.01 * deg]), False),
        (np.array([0.049, 0, 0.07, 0.07, 4.9 * deg, 0.9 * deg]), True),
        (np.array([0.049, 0, 0.07, 0.0715, 4.9 * deg, 0.9 * deg]), False),
    ]
    for x, want in cases:
        if success_check(x, ep) != want:
            return False, f"success_check({x.tolist()}) != {want}"
    return True, f"{len(cases)} boundary cases on all four conditions"


# ------------------------------------------------------------------ harness

def tiny_config(mode="mpc_guided") -> RunConfig:
    cfg = RunConfig().with_mode(mode)
    cfg = cfg.replace("ppo", batch_episodes=6, max_episodes=12, minibatch_size=256, epochs=2)
    return cfg.replace("episode", train_time_limit=3.0)


def check_determinism(seed=3):
    from .harness import TRAIN_LOG_COLUMNS, train

    texts = []
    with tempfile.TemporaryDirectory() as tmp:
        for i in range(2):
            d = os.path.join(tmp, str(i))
            train(tiny_config(), seed=seed, out_dir=d)
            with open(os.path.join(d, "train_log.csv"), "rb") as fh:
                texts.append(fh.read())
    rows = texts[0].count(b"\n") - 1
    ok = texts[0] == texts[1] and rows == 2
    return ok, (f"two runs with seed {seed}: logs {'identical' if texts[0] == texts[1] else 'DIFFER'}"
                f" ({rows} updates, {len(TRAIN_LOG_COLUMNS)} columns)")


def check_checkpoint_roundtrip(seed=0):
    from . import checkpoint
    from .harness import make_agent

    rng = np.random.default_rng(seed)
    cfg = RunConfig()
    agent = make_agent(cfg, rng)
    for p in agent.policy.params + agent.critic.params:
        p += rng.normal(0, 0.05, p.shape)
    agent.obs_normalizer.update(rng.normal(0, 2, (100, agent.obs_normalizer.dim)))
    probe = rng.normal(size=(100, agent.obs_normalizer.dim))
    before = agent.policy.mean(agent.obs_normalizer.apply(probe))
    blob = checkpoint.to_bytes(agent, cfg, {"seed": seed})
    loaded, cfg2, _ = checkpoint.from_bytes(blob)
    after = loaded.policy.mean(loaded.obs_normalizer.apply(probe))
    same = np.array_equal(before, after) and cfg2.digest() == cfg.digest()
    try:
        checkpoint.from_bytes(blob[:-100])
        truncated = False
    except checkpoint.CorruptCheckpointError:
        truncated = True
    return same and truncated, (f"100-probe actions bit-identical={np.array_equal(before, after)}, "
                                f"truncated file rejected={truncated}")


SUITES = {
    "dynamics": [("drift conservation", check_drift_conservation),
                 ("constant wrench vs closed form", check_constant_wrench),
                 ("rotation matrices", check_rotation_matrices),
                 ("thruster allocation", check_allocation)],
    "mpc": [("unconstrained solve vs least-squares oracle", check_mpc_oracle),
            ("one-step solve vs single-stage minimizer", check_mpc_single_stage),
            ("zero input at the target", check_mpc_at_target),
            ("bounds and fast reference", check_mpc_bounds)],
    "pwpf": [("dead zone", check_pwpf_dead_zone),
             ("hysteresis", check_pwpf_hysteresis),
             ("long-run duty vs fine oracle", check_pwpf_duty)],
    "ppo": [("gradients", check_gradients),
            ("clip semantics", check_clip_semantics),
            ("KL closed form vs Monte Carlo", check_kl_monte_carlo),
            ("KL adaptation band", check_kl_band)],
    "reward": [("reward values", check_reward_values),
               ("success predicate", check_success_predicate)],
    "harness": [("determinism", check_determinism),
                ("checkpoint round trip", check_checkpoint_roundtrip)],
}


def run_suites(names, out_dir=None, echo=print) -> list:
    if "all" in names:
        names = list(SUITES)
    results = []
    for suite in names:
        if suite not in SUITES:
            raise ValueError(f"unknown suite {suite!r}; choose from {sorted(SUITES)} or 'all'")
        for label, fn in SUITES[suite]:
            res = _timed(f"{suite}: {label}", fn)
            results.append(res)
            if echo:
                echo(f"[{'PASS' if res.passed else 'FAIL'}] {res.name} - {res.detail} "
                     f"({res.seconds:.1f}s)")
        if out_dir is not None and suite in ("mpc", "pwpf"):
            os.makedirs(out_dir, exist_ok=True)
            path = (dump_mpc_trajectory(os.path.join(out_dir, "mpc_trajectory.csv"))
                    if suite == "mpc" else dump_pwpf_sweep(os.path.join(out_dir, "pwpf_sweep.csv")))
            if echo:
                echo(f"wrote {path}")
    return results
