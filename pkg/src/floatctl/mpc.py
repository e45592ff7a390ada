"""Receding-horizon linear-quadratic tracking for the planar platform.

The only nonlinearity in the platform model is the body-to-lab rotation of the
force, so freezing the attitude at its current value gives an exact linear
model for the prediction.  The horizon problem is condensed into a dense
quadratic in the stacked inputs and solved through its normal equations; input
boxes are handled by clamp-and-resolve on the active set, the room boundary by
a quadratic penalty on predicted positions.

Cost (rectangle rule over the horizon, ``h`` the step)::

    J = h * sum_{k=1..N} |s_k - s_d|^2_Omega  +  h * sum_{k=0..N-1} |u_k|^2_rho
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .dynamics import OMEGA, THETA, PlatformParams, PlatformState, rotation_matrix, wrap_angle

NX, NU = 6, 3


class MpcError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LinearModel:
    A_hat: np.ndarray
    B_hat: np.ndarray
    linearization_attitude: float


@dataclass(frozen=True, eq=False)
class DiscreteModel:
    Ad: np.ndarray
    Bd: np.ndarray
    step: float
    continuous: LinearModel


def _default_omega():
    # (x, y, vx, vy, theta, omega): 1 on pose terms, 100 on rate terms
    return np.diag([1.0, 1.0, 100.0, 100.0, 1.0, 100.0])


@dataclass(frozen=True, eq=False)
class MpcWeights:
    omega: np.ndarray = field(default_factory=_default_omega)
    rho: np.ndarray = field(default_factory=lambda: 1000.0 * np.eye(3))

    def __post_init__(self):
        om = np.array(self.omega, dtype=float)
        rho = np.array(self.rho, dtype=float)
        if om.ndim == 1:
            om = np.diag(om)
        if rho.ndim == 1:
            rho = np.diag(rho)
        object.__setattr__(self, "omega", om)
        object.__setattr__(self, "rho", rho)

    def validate(self):
        for name, mat, n in (("omega", self.omega, NX), ("rho", self.rho, NU)):
            if mat.shape != (n, n) or not np.allclose(mat, mat.T):
                raise MpcError(f"{name} must be a symmetric {n}x{n} matrix")
            if np.min(np.linalg.eigvalsh(mat)) <= 0:
                raise MpcError(f"{name} must be positive definite")


def _default_state_bounds():
    inf = np.inf
    # 5 m x 3 m room centred on the origin, less a 0.25 m margin
    return np.array([[-2.25, 2.25], [-1.25, 1.25], [-inf, inf], [-inf, inf],
                     [-inf, inf], [-inf, inf]])


@dataclass(frozen=True, eq=False)
class MpcConfig:
    horizon: float = 10.0
    step: float = 0.1
    state_bounds: np.ndarray = field(default_factory=_default_state_bounds)
    input_bounds: np.ndarray = field(
        default_factory=lambda: np.array([[-1.0, 1.0], [-1.0, 1.0], [-0.5, 0.5]]))
    target: np.ndarray = field(default_factory=lambda: np.zeros(NX))
    state_penalty: float = 1.0e4
    max_active_set_iterations: int = 50

    def __post_init__(self):
        for name, shape in (("state_bounds", (NX, 2)), ("input_bounds", (NU, 2)),
                            ("target", (NX,))):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float).reshape(shape))

    @property
    def n_steps(self) -> int:
        n = self.horizon / self.step
        if self.step <= 0 or n < 1 or abs(n - round(n)) > 1e-9:
            raise MpcError("horizon must be a positive integer multiple of the step")
        return int(round(n))

    def validate(self):
        _ = self.n_steps
        for name in ("state_bounds", "input_bounds"):
            b = getattr(self, name)
            if np.any(b[:, 0] > b[:, 1]):
                raise MpcError(f"{name} has an empty interval")
        if np.any(self.input_bounds[:, 0] > 0) or np.any(self.input_bounds[:, 1] < 0):
            raise MpcError("input bounds must contain zero")


@dataclass(frozen=True, eq=False)
class MpcSolution:
    inputs: np.ndarray                       # (N, 3)
    predicted_states: np.ndarray             # (N + 1, 6), first row is x0
    predicted_state_derivatives: np.ndarray  # (N, 6)
    objective: float = float("nan")


def linearize(state: PlatformState | np.ndarray, params: PlatformParams) -> LinearModel:
    x = state.as_array() if isinstance(state, PlatformState) else np.asarray(state, dtype=float)
    theta_bar = float(x[THETA])
    A = np.zeros((NX, NX))
    A[0, 2] = A[1, 3] = A[THETA, OMEGA] = 1.0
    B = np.zeros((NX, NU))
    B[2:4, 0:2] = rotation_matrix(theta_bar) / params.mass
    B[OMEGA, 2] = 1.0 / params.inertia
    return LinearModel(A, B, theta_bar)


def discretize(model: LinearModel, step: float) -> DiscreteModel:
    """Exact zero-order hold.  ``A_hat`` is nilpotent (A^2 = 0), so the series stops early."""
    if step < 0:
        raise MpcError("step must be non-negative")
    A, B = model.A_hat, model.B_hat
    if np.any(A @ A):
        raise MpcError("expected double-integrator structure in A_hat")
    Ad = np.eye(NX) + A * step
    Bd = (np.eye(NX) * step + A * (0.5 * step * step)) @ B
    return DiscreteModel(Ad, Bd, step, model)


class _Condensed:
    """Dense horizon quadratic for one discrete model and weight set."""

    def __init__(self, Ad, Bd, h, n, omega, rho):
        self.n, self.h = n, h
        self.nx, self.nu = Bd.shape
        self.phi, self.gamma = _prediction_matrices(Ad, Bd, n)
        q_blocks = np.kron(np.eye(n), omega)
        self.hess = h * (self.gamma.T @ q_blocks @ self.gamma + np.kron(np.eye(n), rho))
        self.gtq = h * (self.gamma.T @ q_blocks)

    @classmethod
    def from_model(cls, model: "DiscreteModel", config: "MpcConfig", weights: "MpcWeights"):
        return cls(model.Ad, model.Bd, model.step, config.n_steps, weights.omega, weights.rho)

    def solve(self, x0, stacked_target, lo, hi, slo, shi, penalty, max_iter):
        """Box-constrained inputs with a quadratic pull on out-of-bounds predictions."""
        free_response = self.phi @ x0
        hess = self.hess
        g = self.gtq @ (stacked_target - free_response)
        extra_q = np.zeros(len(stacked_target))
        extra_target = np.zeros(len(stacked_target))
        for _ in range(10):
            u = _solve_box_qp(hess, g, lo, hi, max_iter)
            states = free_response + self.gamma @ u
            outside = (states < slo - 1e-9) | (states > shi + 1e-9)
            if not np.any(outside & (extra_q == 0.0)):
                return u, states
            extra_q[outside] = penalty
            extra_target[outside] = np.clip(states[outside], slo[outside], shi[outside])
            hess = self.hess + self.h * self.gamma.T @ (extra_q[:, None] * self.gamma)
            g = (self.gtq @ (stacked_target - free_response)
                 + self.h * self.gamma.T @ (extra_q * (extra_target - free_response)))
        return u, states


def _prediction_matrices(Ad, Bd, n):
    """Stacked states s_1..s_N = Phi x0 + Gamma U."""
    nx, nu = Bd.shape
    phi = np.empty((n * nx, nx))
    powers_b = np.empty((n, nx, nu))
    a_pow = np.eye(nx)
    for k in range(n):
        powers_b[k] = a_pow @ Bd          # Ad^k Bd
        a_pow = Ad @ a_pow
        phi[k * nx:(k + 1) * nx] = a_pow  # Ad^(k+1)
    gamma = np.zeros((n * nx, n * nu))
    for i in range(n):
        for j in range(i + 1):
            gamma[i * nx:(i + 1) * nx, j * nu:(j + 1) * nu] = powers_b[i - j]
    return phi, gamma


def _solve_box_qp(hess, g, lo, hi, max_iter):
    """min 1/2 U'HU - g'U subject to lo <= U <= hi (clamp-and-resolve active set)."""
    n = len(g)
    if np.all(np.isinf(lo)) and np.all(np.isinf(hi)):
        return cho_solve(cho_factor(hess), g)
    fixed = np.zeros(n, dtype=bool)
    u = np.zeros(n)
    for _ in range(max_iter):
        free = ~fixed
        rhs = g[free] - hess[np.ix_(free, fixed)] @ u[fixed]
        if np.any(free):
            u[free] = cho_solve(cho_factor(hess[np.ix_(free, free)]), rhs)
        viol = free & ((u < lo - 1e-12) | (u > hi + 1e-12))
        if np.any(viol):
            u[viol] = np.clip(u[viol], lo[viol], hi[viol])
            fixed |= viol
            continue
        # release bounds whose multiplier has the wrong sign
        grad = hess @ u - g
        at_hi = fixed & (u >= hi) & (grad > 1e-12)
        at_lo = fixed & (u <= lo) & (grad < -1e-12)
        release = at_hi | at_lo
        if not np.any(release):
            return u
        fixed &= ~release
    return np.clip(u, lo, hi)


def _relative_start(x0, target):
    """Express the attitude of ``x0`` as target angle plus the wrapped error."""
    x0 = np.array(x0, dtype=float).reshape(NX)
    x0[THETA] = target[THETA] + wrap_angle(x0[THETA] - target[THETA])
    return x0


def objective(model: DiscreteModel, x0, inputs, config: MpcConfig, weights: MpcWeights) -> float:
    """Horizon cost of an input sequence (no boundary penalty), by forward simulation."""
    x = _relative_start(x0, config.target)
    inputs = np.asarray(inputs, dtype=float).reshape(-1, NU)
    total = 0.0
    for u in inputs:
        x = model.Ad @ x + model.Bd @ u
        e = x - config.target
        total += model.step * (e @ weights.omega @ e + u @ weights.rho @ u)
    return float(total)


def solve(model: DiscreteModel, x0, config: MpcConfig, weights: MpcWeights,
          enforce_bounds: bool = True) -> MpcSolution:
    """Optimal input sequence from ``x0`` (same layout as the platform state).

    With ``enforce_bounds=False`` both the input box and the room penalty are
    dropped, leaving the plain quadratic.
    """
    config.validate()
    weights.validate()
    cond = _Condensed.from_model(model, config, weights)
    n = cond.n
    x0 = _relative_start(x0, config.target)
    stacked_target = np.tile(config.target, n)
    if enforce_bounds:
        lo, hi = np.tile(config.input_bounds[:, 0], n), np.tile(config.input_bounds[:, 1], n)
        slo, shi = np.tile(config.state_bounds[:, 0], n), np.tile(config.state_bounds[:, 1], n)
    else:
        lo, hi = np.full(n * NU, -np.inf), np.full(n * NU, np.inf)
        slo, shi = np.full(n * NX, -np.inf), np.full(n * NX, np.inf)
    u, stacked_states = cond.solve(x0, stacked_target, lo, hi, slo, shi,
                                   config.state_penalty, config.max_active_set_iterations)
    inputs = u.reshape(n, NU)
    states = np.vstack([x0, stacked_states.reshape(n, NX)])
    A, B = model.continuous.A_hat, model.continuous.B_hat
    derivs = states[:-1] @ A.T + inputs @ B.T
    return MpcSolution(inputs, states, derivs,
                       objective(model, x0, inputs, config, weights))


def reference_derivative(solution: MpcSolution, k: int) -> np.ndarray:
    n = len(solution.predicted_state_derivatives)
    if not 0 <= k < n:
        raise IndexError(f"step {k} outside horizon of {n}")
    return solution.predicted_state_derivatives[k]


# state indices (position, rate) and input index for each decoupled lab axis
_AXES = ((0, 2, 0), (1, 3, 1), (THETA, OMEGA, 2))


class ReferenceGenerator:
    """First-step MPC reference derivative for many platforms at once.

    With diagonal weights and an isotropic force weight the lab-frame problem
    splits into three scalar double integrators whose optimum does not depend
    on the frozen attitude.  Each axis gets a precomputed linear gain; only
    platforms whose prediction leaves the room are re-solved (per axis, with
    the boundary penalty), and any whose body-frame inputs would leave the box
    fall back to :func:`solve`.
    """

    def __init__(self, params: PlatformParams, config: MpcConfig, weights: MpcWeights):
        config.validate()
        weights.validate()
        self.params, self.config, self.weights = params, config, weights
        self.n = n = config.n_steps
        om, rho = weights.omega, weights.rho
        self.separable = (np.count_nonzero(om - np.diag(np.diag(om))) == 0
                          and np.count_nonzero(rho - np.diag(np.diag(rho))) == 0
                          and rho[0, 0] == rho[1, 1]
                          and np.all(np.isinf(config.state_bounds[2:])))
        self.fallbacks = 0
        self.penalty_solves = 0
        self.box_solves = 0
        self.isotropic = om[0, 0] == om[1, 1] and om[2, 2] == om[3, 3]
        if not self.separable:
            return
        h = config.step
        self._axes = []
        for pos, rate, inp in _AXES:
            gain = 1.0 / (params.inertia if inp == 2 else params.mass)
            Ad = np.array([[1.0, h], [0.0, 1.0]])
            Bd = np.array([[0.5 * h * h * gain], [h * gain]])
            cond = _Condensed(Ad, Bd, h, n, np.diag([om[pos, pos], om[rate, rate]]),
                              np.array([[rho[inp, inp]]]))
            fac = cho_factor(cond.hess)
            kx = -cho_solve(fac, cond.gtq @ cond.phi)                          # (N, 2)
            kd = cho_solve(fac, cond.gtq @ np.tile(np.eye(2), (n, 1)))         # (N, 2)
            self._axes.append(dict(
                pos=pos, rate=rate, inp=inp, gain=gain, cond=cond, kx=kx, kd=kd,
                sx=cond.phi + cond.gamma @ kx, sd=cond.gamma @ kd,
                gp=cond.gamma[0::2], phip=cond.phi[0::2],
                g_free=-cond.gtq @ cond.phi, g_target=cond.gtq @ np.tile(np.eye(2), (n, 1))))

    def first_derivative(self, x0) -> np.ndarray:
        """Reference derivative at k = 0 for a batch of states ``x0`` (B, 6)."""
        x0 = np.atleast_2d(np.array(x0, dtype=float))
        cfg = self.config
        target = cfg.target
        x0[:, THETA] = target[THETA] + wrap_angle(x0[:, THETA] - target[THETA])
        batch = len(x0)
        if not self.separable:
            return np.array([self._full(x) for x in x0])

        n = self.n
        ib = cfg.input_bounds
        theta = x0[:, THETA][:, None]
        c, s = np.cos(theta), np.sin(theta)
        u_lab = np.empty((batch, n, NU))
        for ax in self._axes:
            u_lab[:, :, ax["inp"]] = (x0[:, [ax["pos"], ax["rate"]]] @ ax["kx"].T
                                      + target[[ax["pos"], ax["rate"]]] @ ax["kd"].T)
        # the first pass of the full solver is the box QP without any penalty
        bx = c * u_lab[..., 0] + s * u_lab[..., 1]
        by = -s * u_lab[..., 0] + c * u_lab[..., 1]
        force_ok = (np.all((bx >= ib[0, 0] - 1e-12) & (bx <= ib[0, 1] + 1e-12), axis=1)
                    & np.all((by >= ib[1, 0] - 1e-12) & (by <= ib[1, 1] + 1e-12), axis=1))
        torque_ok = np.all((u_lab[..., 2] >= ib[2, 0] - 1e-12)
                           & (u_lab[..., 2] <= ib[2, 1] + 1e-12), axis=1)
        for i in np.flatnonzero(~torque_ok):
            u_lab[i, :, 2] = self._axis_box_solve(self._axes[2], x0[i, [THETA, OMEGA]],
                                                  target[[THETA, OMEGA]], ib[2])

        deriv = np.zeros((batch, NX))
        need_full = np.zeros(batch, dtype=bool)
        for i in np.flatnonzero(~force_ok):
            u_lab[i, :, 0:2] = self._body_box_solve(x0[i], c[i, 0], s[i, 0])
            need_full[i] = np.isnan(u_lab[i, 0, 0])

        # forces inside the box: lab axes stay separable, room penalty per axis
        for ax in self._axes[:2]:
            p, r, j = ax["pos"], ax["rate"], ax["inp"]
            lo, hi = cfg.state_bounds[p]
            if not (np.isfinite(lo) or np.isfinite(hi)):
                continue
            xa = x0[:, [p, r]]
            da = target[[p, r]]
            pos_pred = xa @ ax["phip"].T + u_lab[:, :, j] @ ax["gp"].T
            out = np.any((pos_pred < lo - 1e-9) | (pos_pred > hi + 1e-9), axis=1)
            for i in np.flatnonzero(out):
                if not force_ok[i]:
                    need_full[i] = True
                    continue
                self.penalty_solves += 1
                u_lab[i, :, j] = self._axis_penalty_solve(ax, xa[i], da, u_lab[i, :, j], lo, hi)
        # penalty solutions must still respect the body-frame box
        bx = c * u_lab[..., 0] + s * u_lab[..., 1]
        by = -s * u_lab[..., 0] + c * u_lab[..., 1]
        still_ok = (np.all((bx >= ib[0, 0] - 1e-9) & (bx <= ib[0, 1] + 1e-9), axis=1)
                    & np.all((by >= ib[1, 0] - 1e-9) & (by <= ib[1, 1] + 1e-9), axis=1))
        need_full |= ~still_ok

        deriv[:, 0:2] = x0[:, 2:4]
        deriv[:, THETA] = x0[:, OMEGA]
        deriv[:, 2:4] = u_lab[:, 0, 0:2] / self.params.mass
        deriv[:, OMEGA] = u_lab[:, 0, 2] / self.params.inertia
        for i in np.flatnonzero(need_full):
            if self.isotropic:
                deriv[i, 2:4] = self._force_solve(x0[i], c[i, 0], s[i, 0]) / self.params.mass
            else:
                deriv[i] = self._full(x0[i])
        return deriv

    def _force_solve(self, x, c, s):
        """First lab-frame force of the coupled problem: box on body-frame
        forces plus the room penalty on lab-frame positions.  Runs the same
        iteration as ``_Condensed.solve`` on the 2N force inputs only (the
        torque channel never couples to them)."""
        self.fallbacks += 1
        cfg = self.config
        ax = self._axes[0]
        cond = ax["cond"]
        n, h, gp = self.n, cond.h, ax["gp"]
        t = cfg.target
        xa = (x[[0, 2]], x[[1, 3]])
        g_lab = [ax["g_free"] @ xa[k] + ax["g_target"] @ t[[k, k + 2]] for k in range(2)]
        free_pos = [ax["phip"] @ xa[k] for k in range(2)]
        lo = np.repeat(cfg.input_bounds[0:2, 0], n)
        hi = np.repeat(cfg.input_bounds[0:2, 1], n)
        q = [np.zeros(n), np.zeros(n)]
        tgt = [np.zeros(n), np.zeros(n)]
        for _ in range(10):
            p_mat = [cond.hess + h * gp.T @ (q[k][:, None] * gp) for k in range(2)]
            g = [g_lab[k] + h * gp.T @ (q[k] * (tgt[k] - free_pos[k])) for k in range(2)]
            off = c * s * (p_mat[1] - p_mat[0])
            hess = np.block([[c * c * p_mat[0] + s * s * p_mat[1], off],
                             [off, s * s * p_mat[0] + c * c * p_mat[1]]])
            z = _solve_box_qp(hess, np.concatenate([c * g[0] + s * g[1], -s * g[0] + c * g[1]]),
                              lo, hi, cfg.max_active_set_iterations)
            lab = (c * z[:n] - s * z[n:], s * z[:n] + c * z[n:])
            grew = False
            for k in range(2):
                pos = free_pos[k] + gp @ lab[k]
                blo, bhi = cfg.state_bounds[k]
                outside = (pos < blo - 1e-9) | (pos > bhi + 1e-9)
                if np.any(outside & (q[k] == 0.0)):
                    grew = True
                q[k][outside] = cfg.state_penalty
                tgt[k][outside] = np.clip(pos[outside], blo, bhi)
            if not grew:
                break
        return np.array([lab[0][0], lab[1][0]])

    def _axis_box_solve(self, ax, xa, da, bounds):
        cond = ax["cond"]
        g = ax["g_free"] @ xa + ax["g_target"] @ da
        self.box_solves += 1
        return _solve_box_qp(cond.hess, g, np.full(self.n, bounds[0]), np.full(self.n, bounds[1]),
                             self.config.max_active_set_iterations)

    def _body_box_solve(self, x, c, s):
        """Force channels in the frozen body frame, where the box is per axis.

        Valid because position and velocity weights are equal on x and y; if
        the resulting prediction leaves the room the caller falls back.
        """
        if not self.isotropic:
            return np.full((self.n, 2), np.nan)
        cfg = self.config
        rot = np.array([[c, -s], [s, c]])
        t = cfg.target
        pb, vb = rot.T @ x[0:2], rot.T @ x[2:4]
        pdb, vdb = rot.T @ t[0:2], rot.T @ t[2:4]
        ax = self._axes[0]
        ub = np.column_stack([
            self._axis_box_solve(ax, np.array([pb[k], vb[k]]), np.array([pdb[k], vdb[k]]),
                                 cfg.input_bounds[k]) for k in range(2)])
        pos_b = np.column_stack([ax["phip"] @ np.array([pb[k], vb[k]]) + ax["gp"] @ ub[:, k]
                                 for k in range(2)])
        pos = pos_b @ rot.T
        sb = cfg.state_bounds
        if np.any((pos < sb[0:2, 0] - 1e-9) | (pos > sb[0:2, 1] + 1e-9)):
            return np.full((self.n, 2), np.nan)
        return ub @ rot.T

    def _axis_penalty_solve(self, ax, xa, da, u, lo, hi):
        """Same iteration as ``_Condensed.solve`` restricted to one unbounded axis."""
        cond = ax["cond"]
        gp, free_pos = ax["gp"], ax["phip"] @ xa
        h, pen = cond.h, self.config.state_penalty
        g0 = ax["g_free"] @ xa + ax["g_target"] @ da
        extra_q = np.zeros(self.n)
        extra_target = np.zeros(self.n)
        for _ in range(10):
            pos = free_pos + gp @ u
            outside = (pos < lo - 1e-9) | (pos > hi + 1e-9)
            if not np.any(outside & (extra_q == 0.0)):
                break
            extra_q[outside] = pen
            extra_target[outside] = np.clip(pos[outside], lo, hi)
            hess = cond.hess + h * gp.T @ (extra_q[:, None] * gp)
            g = g0 + h * gp.T @ (extra_q * (extra_target - free_pos))
            u = cho_solve(cho_factor(hess), g)
        return u

    def _full(self, x):
        self.fallbacks += 1
        model = discretize(linearize(x, self.params), self.config.step)
        return solve(model, x, self.config, self.weights).predicted_state_derivatives[0]
