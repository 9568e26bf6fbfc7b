"""Tandem-rotor rigid-body plant, Dryden gusts and actuator mixer.

Frames are North-East-Down. Thrust ``f >= 0`` acts along ``-b3`` (up at
level attitude), so hover needs ``f = m g``. Drag acts on the air-relative
velocity and is dissipative for positive coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .liegroup import ExtendedPose, cross, orthonormalize

E3 = np.array([0.0, 0.0, 1.0])
FT_PER_M = 1.0 / 0.3048


@dataclass(frozen=True)
class VehicleParams:
    mass_kg: float = 218.0
    inertia: np.ndarray = field(default_factory=lambda: np.diag([26.8, 97.6, 87.2]))
    drag_force: np.ndarray = field(default_factory=lambda: np.diag([20.0, 20.0, 10.0]))
    drag_torque_E: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(3))
    drag_torque_F: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(3))
    gravity: float = 9.81
    rotor_arm_m: float = 2.0
    rotor_height_m: float = 1.0

    def __post_init__(self):
        for name in ("inertia", "drag_force", "drag_torque_E", "drag_torque_F"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float).reshape(3, 3))
        if self.mass_kg <= 0.0:
            raise ValueError("mass must be positive")
        J = self.inertia
        if not np.allclose(J, J.T) or np.linalg.eigvalsh(J).min() <= 0.0:
            raise ValueError("inertia must be symmetric positive definite")
        D = self.drag_force
        if np.any(D != np.diag(np.diag(D))) or np.any(np.diag(D) < 0.0):
            raise ValueError("drag_force must be diagonal with nonnegative entries")

    @cached_property
    def inertia_inv(self) -> np.ndarray:
        return np.linalg.inv(self.inertia)

    @property
    def hover_thrust(self) -> float:
        return self.mass_kg * self.gravity


@dataclass(frozen=True)
class ControlInput:
    thrust_n: float
    torque_nm: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "thrust_n", float(self.thrust_n))
        object.__setattr__(self, "torque_nm", np.array(self.torque_nm, dtype=float).reshape(3))

    def as_array(self) -> np.ndarray:
        return np.concatenate([[self.thrust_n], self.torque_nm])

    @classmethod
    def from_array(cls, u) -> "ControlInput":
        u = np.asarray(u, dtype=float)
        return cls(u[0], u[1:4])


@dataclass(frozen=True)
class VehicleState:
    pose: ExtendedPose
    omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.array(self.omega, dtype=float).reshape(3))

    @classmethod
    def from_parts(cls, C, v, r, omega) -> "VehicleState":
        return cls(ExtendedPose(C, v, r), omega)

    @property
    def C(self):
        return self.pose.C

    @property
    def v(self):
        return self.pose.v

    @property
    def r(self):
        return self.pose.r


@dataclass(frozen=True)
class StateDerivative:
    C_dot: np.ndarray
    v_dot: np.ndarray
    r_dot: np.ndarray
    omega_dot: np.ndarray


def body_force(state: VehicleState, u: ControlInput, wind, p: VehicleParams) -> np.ndarray:
    C = state.C
    v_rel = state.v - np.asarray(wind, dtype=float)
    f_prop = np.array([0.0, 0.0, -u.thrust_n])
    f_drag_a = -C @ p.drag_force @ C.T @ v_rel
    f_grav_a = np.array([0.0, 0.0, p.mass_kg * p.gravity])
    return f_prop + C.T @ (f_drag_a + f_grav_a)


def body_torque(state: VehicleState, u: ControlInput, wind, p: VehicleParams) -> np.ndarray:
    v_rel = state.v - np.asarray(wind, dtype=float)
    parasitic = -p.drag_torque_E @ state.C.T @ v_rel - p.drag_torque_F @ state.omega
    return u.torque_nm + parasitic


def dynamics_deriv(state: VehicleState, u: ControlInput, wind, p: VehicleParams) -> StateDerivative:
    w = state.omega
    J = p.inertia
    f_b = body_force(state, u, wind, p)
    m_b = body_torque(state, u, wind, p)
    return StateDerivative(
        C_dot=state.C @ cross(w),
        v_dot=state.C @ f_b / p.mass_kg,
        r_dot=state.v.copy(),
        omega_dot=p.inertia_inv @ (m_b - cross(w) @ (J @ w)),
    )


def _raw_deriv(C, v, w, f, m, wind, p: VehicleParams):
    # array form of dynamics_deriv used inside the integrator
    vb = C.T @ (v - wind)
    v_dot = (-f * C[:, 2] - C @ (p.drag_force @ vb)) / p.mass_kg
    v_dot[2] += p.gravity
    Jw = p.inertia @ w
    tau = m - p.drag_torque_E @ vb - p.drag_torque_F @ w - np.array(
        [w[1] * Jw[2] - w[2] * Jw[1], w[2] * Jw[0] - w[0] * Jw[2], w[0] * Jw[1] - w[1] * Jw[0]])
    return C @ cross(w), v_dot, v, p.inertia_inv @ tau


def step_rk4(state: VehicleState, u: ControlInput, wind, p: VehicleParams, dt: float,
             reorthonormalize: bool = True) -> VehicleState:
    """One classical RK4 step with zero-order-held input and wind.

    The DCM is integrated in its 3x3 embedding and projected back onto SO(3)
    afterwards.
    """
    if dt == 0.0:
        return state
    wind = np.asarray(wind, dtype=float)
    f, m = u.thrust_n, u.torque_nm
    C, v, r, w = state.C, state.v, state.r, state.omega
    k1 = _raw_deriv(C, v, w, f, m, wind, p)
    h = 0.5 * dt
    k2 = _raw_deriv(C + h * k1[0], v + h * k1[1], w + h * k1[3], f, m, wind, p)
    k3 = _raw_deriv(C + h * k2[0], v + h * k2[1], w + h * k2[3], f, m, wind, p)
    k4 = _raw_deriv(C + dt * k3[0], v + dt * k3[1], w + dt * k3[3], f, m, wind, p)
    s = dt / 6.0
    step = [s * (a + 2.0 * b + 2.0 * c + d) for a, b, c, d in zip(k1, k2, k3, k4)]
    C = C + step[0]
    if reorthonormalize:
        C = orthonormalize(C)
    return VehicleState(ExtendedPose(C, v + step[1], r + step[2]), w + step[3])


def propagate(state: VehicleState, u: ControlInput, wind, p: VehicleParams, dt: float,
              substeps: int = 1) -> VehicleState:
    h = dt / substeps
    for _ in range(substeps):
        state = step_rk4(state, u, wind, p, h)
    return state


# ----------------------------------------------------------------------------
# Dryden gusts


@dataclass(frozen=True)
class DrydenParams:
    """First-order Dryden shaping filters, MIL-F-8785C low-altitude form.

    ``W0`` is the wind speed at 20 ft; the vertical intensity is ``0.1 W0``.
    """

    W0: float = 10.0
    altitude_m: float = 20.0
    airspeed_mps: float = 5.0

    def length_scales(self) -> np.ndarray:
        h = self.altitude_m * FT_PER_M
        L_uv = h / (0.177 + 0.000823 * h) ** 1.2
        return np.array([L_uv, L_uv, h]) / FT_PER_M

    def intensities(self) -> np.ndarray:
        h = self.altitude_m * FT_PER_M
        sigma_w = 0.1 * self.W0
        sigma_uv = sigma_w / (0.177 + 0.000823 * h) ** 0.4
        return np.array([sigma_uv, sigma_uv, sigma_w])

    def time_constants(self) -> np.ndarray:
        return self.length_scales() / self.airspeed_mps


@dataclass(frozen=True)
class WindState:
    mean_wind: np.ndarray
    gust: np.ndarray
    params: DrydenParams = field(default_factory=DrydenParams)

    def __post_init__(self):
        object.__setattr__(self, "mean_wind", np.array(self.mean_wind, dtype=float).reshape(3))
        object.__setattr__(self, "gust", np.array(self.gust, dtype=float).reshape(3))

    @property
    def W0(self) -> float:
        return self.params.W0

    @property
    def total(self) -> np.ndarray:
        return self.mean_wind + self.gust


def dryden_coefficients(params: DrydenParams, dt: float):
    """Exact discretization ``g+ = a g + b n`` of each shaping filter, n ~ N(0, 1).

    The stationary variance of the discrete process is ``b**2 / (1 - a**2)``,
    which equals the continuous intensity squared.
    """
    a = np.exp(-dt / params.time_constants())
    b = params.intensities() * np.sqrt(1.0 - a * a)
    return a, b


def dryden_step(w: WindState, dt: float, rng: np.random.Generator) -> WindState:
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    a, b = dryden_coefficients(w.params, dt)
    noise = rng.standard_normal(3)
    return replace(w, gust=a * w.gust + b * noise)


# ----------------------------------------------------------------------------
# Mixer


@dataclass(frozen=True)
class RotorForces:
    """Front and rear rotor force vectors in body axes (N)."""

    front: np.ndarray
    rear: np.ndarray


def _mix_matrix(p: VehicleParams) -> np.ndarray:
    # rows: f, m1, m2, m3 ; cols: front_y, front_z, rear_y, rear_z
    l, h = p.rotor_arm_m, p.rotor_height_m
    return np.array([
        [0.0, -1.0, 0.0, -1.0],
        [h, 0.0, h, 0.0],
        [0.0, -l, 0.0, l],
        [l, 0.0, -l, 0.0],
    ])


def mix(u: ControlInput, p: VehicleParams) -> RotorForces:
    """Split thrust and body torque between the two rotors.

    Rotors sit at ``[+-rotor_arm_m, 0, -rotor_height_m]`` in body axes.
    Only b2/b3 components are used; b1 is left for trim and stays zero.
    """
    fy1, fz1, fy2, fz2 = np.linalg.solve(_mix_matrix(p), u.as_array())
    return RotorForces(np.array([0.0, fy1, fz1]), np.array([0.0, fy2, fz2]))


def unmix(rf: RotorForces, p: VehicleParams) -> ControlInput:
    x = np.array([rf.front[1], rf.front[2], rf.rear[1], rf.rear[2]])
    return ControlInput.from_array(_mix_matrix(p) @ x)
