"""Planar rigid-body model of the air-bearing floating platform.

State layout used by every array routine in the package::

    x = [x, y, vx, vy, theta, omega]      (lab inertial frame)

Wrench layout::

    u = [Fx, Fy, M]                       (body frame, N and N m)

Translation is a double integrator driven by the body force rotated into the
lab frame; rotation is a double integrator driven by the torque.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

STATE_DIM = 6
WRENCH_DIM = 3

# index helpers into the state vector
POS = slice(0, 2)
VEL = slice(2, 4)
THETA = 4
OMEGA = 5


class SaturationError(ValueError):
    """Requested wrench is outside what the thrusters can produce."""

    def __init__(self, message: str, nearest: "BodyWrench"):
        super().__init__(message)
        self.nearest = nearest


def wrap_angle(angle):
    """Wrap to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), 2.0 * np.pi)


@dataclass(frozen=True)
class PlatformParams:
    mass: float = 20.0      # kg
    inertia: float = 0.5    # kg m^2
    dt: float = 0.1         # s, control / integration period

    def __post_init__(self):
        if not (self.mass > 0 and self.inertia > 0 and self.dt > 0):
            raise ValueError("mass, inertia and dt must all be positive")


@dataclass(frozen=True, eq=False)
class PlatformState:
    r: np.ndarray = field(default_factory=lambda: np.zeros(2))
    v: np.ndarray = field(default_factory=lambda: np.zeros(2))
    theta: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        r = np.array(self.r, dtype=float).reshape(2)
        v = np.array(self.v, dtype=float).reshape(2)
        theta = float(wrap_angle(self.theta))
        omega = float(self.omega)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v))
                and np.isfinite(theta) and np.isfinite(omega)):
            raise ValueError("platform state must be finite")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "omega", omega)

    def as_array(self) -> np.ndarray:
        return np.array([self.r[0], self.r[1], self.v[0], self.v[1], self.theta, self.omega])

    @classmethod
    def from_array(cls, x) -> "PlatformState":
        x = np.asarray(x, dtype=float)
        return cls(r=x[POS], v=x[VEL], theta=x[THETA], omega=x[OMEGA])


@dataclass(frozen=True, eq=False)
class BodyWrench:
    force: np.ndarray = field(default_factory=lambda: np.zeros(2))
    torque: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "force", np.array(self.force, dtype=float).reshape(2))
        object.__setattr__(self, "torque", float(self.torque))

    def as_array(self) -> np.ndarray:
        return np.array([self.force[0], self.force[1], self.torque])

    @classmethod
    def from_array(cls, u) -> "BodyWrench":
        u = np.asarray(u, dtype=float)
        return cls(force=u[:2], torque=u[2])


def rotation_matrix(theta) -> np.ndarray:
    """Body-to-lab rotation for attitude ``theta`` (radians)."""
    theta = float(theta)
    if not np.isfinite(theta):
        raise ValueError("rotation angle must be finite")
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotate(theta, vec):
    """Batched body-to-lab rotation: ``theta`` (...,), ``vec`` (..., 2)."""
    c, s = np.cos(theta), np.sin(theta)
    vx, vy = vec[..., 0], vec[..., 1]
    return np.stack([c * vx - s * vy, s * vx + c * vy], axis=-1)


def derivative_array(x, u, mass, inertia):
    """Time derivative of batched states ``x`` (...,6) under body wrench ``u`` (...,3)."""
    dx = np.empty_like(x, dtype=float)
    dx[..., POS] = x[..., VEL]
    dx[..., VEL] = rotate(x[..., THETA], u[..., :2]) / mass
    dx[..., THETA] = x[..., OMEGA]
    dx[..., OMEGA] = u[..., 2] / inertia
    return dx


def rk4_array(x, u, mass, inertia, h):
    """One classical RK4 step with the wrench held constant; angle is left unwrapped."""
    k1 = derivative_array(x, u, mass, inertia)
    k2 = derivative_array(x + 0.5 * h * k1, u, mass, inertia)
    k3 = derivative_array(x + 0.5 * h * k2, u, mass, inertia)
    k4 = derivative_array(x + h * k3, u, mass, inertia)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def state_derivative(state: PlatformState, wrench: BodyWrench, params: PlatformParams) -> np.ndarray:
    """Returns (rdot, vdot, thetadot, omegadot) as a 6-vector."""
    return derivative_array(state.as_array(), wrench.as_array(), params.mass, params.inertia)


def step(state: PlatformState, wrench: BodyWrench, params: PlatformParams,
         dt: float | None = None) -> PlatformState:
    h = params.dt if dt is None else dt
    x = rk4_array(state.as_array(), wrench.as_array(), params.mass, params.inertia, h)
    return PlatformState.from_array(x)


def apply_disturbance(state: PlatformState, dv, domega: float) -> PlatformState:
    """Impulsive kick: velocity and rate jump, pose untouched."""
    dv = np.asarray(dv, dtype=float).reshape(2)
    if not (np.all(np.isfinite(dv)) and np.isfinite(domega)):
        raise ValueError("disturbance must be finite")
    return PlatformState(r=state.r, v=state.v + dv, theta=state.theta, omega=state.omega + domega)


# --------------------------------------------------------------------------
# thrusters
# --------------------------------------------------------------------------

def _default_geometry():
    h = 0.25  # half-side of the 0.5 m square body
    # two nozzles per corner, one along each body axis; each nozzle has an
    # exact opposite at the diagonally adjacent corner so that pure forces and
    # pure torques are both available
    positions = np.array([
        [h, h], [h, -h], [-h, h], [-h, -h],
        [h, h], [-h, h], [h, -h], [-h, -h],
    ])
    directions = np.array([
        [-1.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [1.0, 0.0],
        [0.0, -1.0], [0.0, -1.0], [0.0, 1.0], [0.0, 1.0],
    ])
    return positions, directions


@dataclass(frozen=True, eq=False)
class ThrusterLayout:
    """Eight body-fixed nozzles.

    ``wrench_map`` is the 3x8 matrix taking per-nozzle thrust (N) to the body
    wrench.  Nozzles must come in exactly opposing pairs (columns that are
    negatives of each other); allocation works on the signed pair activations.
    """

    positions: np.ndarray = field(default_factory=lambda: _default_geometry()[0])
    directions: np.ndarray = field(default_factory=lambda: _default_geometry()[1])
    max_thrust: np.ndarray = field(default_factory=lambda: np.ones(8))

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        dirs = np.array(self.directions, dtype=float).reshape(-1, 2)
        fmax = np.broadcast_to(np.array(self.max_thrust, dtype=float), (len(pos),)).copy()
        if len(pos) != 8 or len(dirs) != 8:
            raise ValueError("thruster layout needs exactly 8 nozzles")
        if np.max(np.abs(np.linalg.norm(dirs, axis=1) - 1.0)) > 1e-12:
            raise ValueError("thrust directions must be unit vectors")
        if np.any(fmax <= 0):
            raise ValueError("max thrust must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "max_thrust", fmax)

        unit = np.vstack([dirs.T, pos[:, 0] * dirs[:, 1] - pos[:, 1] * dirs[:, 0]])
        wmap = unit * fmax
        if np.linalg.matrix_rank(wmap) != 3:
            raise ValueError("thruster layout cannot produce every wrench direction")
        object.__setattr__(self, "wrench_map", wmap)

        pairs = []
        used = set()
        for i in range(8):
            if i in used:
                continue
            for j in range(i + 1, 8):
                if j not in used and np.allclose(wmap[:, i], -wmap[:, j], atol=1e-12):
                    pairs.append((i, j))
                    used.update((i, j))
                    break
            else:
                raise ValueError(f"nozzle {i} has no exactly opposing partner")
        pairs = np.array(pairs)
        pair_map = wmap[:, pairs[:, 0]]
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "pair_map", pair_map)
        object.__setattr__(self, "pair_pinv", np.linalg.pinv(pair_map))
        _, _, vt = np.linalg.svd(pair_map)
        object.__setattr__(self, "pair_null", vt[3:].T)
        object.__setattr__(self, "box_limits", _largest_box(self))

    def to_dict(self) -> dict:
        return {
            "positions": self.positions.tolist(),
            "directions": self.directions.tolist(),
            "max_thrust": self.max_thrust.tolist(),
        }


def thruster_wrench(layout: ThrusterLayout, duty) -> BodyWrench:
    duty = np.asarray(duty, dtype=float).reshape(8)
    if np.any(duty < 0.0) or np.any(duty > 1.0) or not np.all(np.isfinite(duty)):
        raise ValueError("duty cycles must lie in [0, 1]")
    return BodyWrench.from_array(layout.wrench_map @ duty)


def _pair_feasible(layout: ThrusterLayout, a0: np.ndarray):
    """Minimum-norm bounded pair activation consistent with ``a0``, or None.

    ``a0`` is the pseudo-inverse solution; it is orthogonal to the null space, so
    the feasible point nearest to the origin along the null space is also the
    minimum-norm one.
    """
    if np.all(np.abs(a0) <= 1.0 + 1e-12):
        return np.clip(a0, -1.0, 1.0)
    null = layout.pair_null
    if null.shape[1] == 0:
        return None
    if null.shape[1] == 1:
        n = null[:, 0]
        lo, hi = -np.inf, np.inf
        for aj, nj in zip(a0, n):
            if abs(nj) < 1e-14:
                if abs(aj) > 1.0 + 1e-12:
                    return None
                continue
            t1, t2 = (-1.0 - aj) / nj, (1.0 - aj) / nj
            lo, hi = max(lo, min(t1, t2)), min(hi, max(t1, t2))
        if lo > hi + 1e-12:
            return None
        t = min(max(0.0, lo), hi)
        return np.clip(a0 + t * n, -1.0, 1.0)
    # general null space: least-distance problem
    from scipy.optimize import minimize

    cons = [{"type": "ineq", "fun": lambda z: 1.0 - (a0 + null @ z)},
            {"type": "ineq", "fun": lambda z: 1.0 + (a0 + null @ z)}]
    res = minimize(lambda z: z @ z, np.zeros(null.shape[1]), jac=lambda z: 2 * z,
                   constraints=cons, method="SLSQP")
    a = a0 + null @ res.x
    if not res.success or np.any(np.abs(a) > 1.0 + 1e-9):
        return None
    return np.clip(a, -1.0, 1.0)


def _pairs_to_duty(layout: ThrusterLayout, a: np.ndarray) -> np.ndarray:
    duty = np.zeros(a.shape[:-1] + (8,))
    duty[..., layout.pairs[:, 0]] = np.maximum(a, 0.0)
    duty[..., layout.pairs[:, 1]] = np.maximum(-a, 0.0)
    return duty


def allocate(wrench: BodyWrench, layout: ThrusterLayout) -> np.ndarray:
    """Minimum-norm nonnegative duty vector producing ``wrench``.

    Raises SaturationError (carrying the nearest attainable wrench) when no
    duty vector in [0, 1]^8 reproduces the request.
    """
    w = wrench.as_array()
    a = _pair_feasible(layout, layout.pair_pinv @ w)
    if a is None:
        res = lsq_linear(layout.pair_map, w, bounds=(-1.0, 1.0), method="bvls")
        nearest = BodyWrench.from_array(layout.pair_map @ res.x)
        raise SaturationError(f"wrench {w} is not attainable", nearest)
    return _pairs_to_duty(layout, a)


def allocate_array(u, layout: ThrusterLayout) -> np.ndarray:
    """Batched allocation (..., 3) -> (..., 8) for wrenches inside ``box_limits``.

    Anything outside the attainable set is saturated along the null-space
    projection and then clipped, so callers get a duty vector regardless.
    """
    u = np.asarray(u, dtype=float)
    a = u @ layout.pair_pinv.T
    bad = np.any(np.abs(a) > 1.0 + 1e-12, axis=-1)
    if np.any(bad):
        flat = a.reshape(-1, a.shape[-1])
        flat_bad = bad.reshape(-1)
        for i in np.flatnonzero(flat_bad):
            fixed = _pair_feasible(layout, flat[i])
            flat[i] = np.clip(flat[i], -1.0, 1.0) if fixed is None else fixed
        a = flat.reshape(a.shape)
    return _pairs_to_duty(layout, a)


def _largest_box(layout: ThrusterLayout) -> np.ndarray:
    """Per-axis limits (Fx, Fy, M) of the largest attainable axis-aligned box.

    The box shape follows each axis's pure-axis capability; its scale is found
    by bisection on the corners (the attainable set is convex).
    """
    axis_max = np.empty(3)
    for k in range(3):
        # maximize e_k . (pair_map a) subject to |a| <= 1 and other axes zero
        lo, hi = 0.0, float(np.abs(layout.pair_map[k]).sum())
        e = np.zeros(3)
        e[k] = 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if _pair_feasible(layout, layout.pair_pinv @ (mid * e)) is not None:
                lo = mid
            else:
                hi = mid
        axis_max[k] = lo
    corners = np.array(np.meshgrid([-1, 1], [-1, 1], [-1, 1])).reshape(3, -1).T
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if all(_pair_feasible(layout, layout.pair_pinv @ (mid * axis_max * c)) is not None
               for c in corners):
            lo = mid
        else:
            hi = mid
    # trim a hair so round-off at the corners never trips saturation
    return axis_max * lo * (1.0 - 1e-9)
