"""Left-invariant tracking error, its linearization and the horizon schedule.

The 12-dim error state is ``[xi_phi, xi_v, xi_r, dh]`` where the first nine
entries are ``log(X_ref^-1 X)`` and ``dh = dC J w - h_ref``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from .liegroup import ExtendedPose, compose, cross, exp_se23, inverse, log_se23
from .vehicle import E3, ControlInput, VehicleParams, VehicleState

NX = 12
NU = 4

PHI = slice(0, 3)
VEL = slice(3, 6)
POS = slice(6, 9)
MOM = slice(9, 12)


@dataclass(frozen=True)
class ErrorState:
    xi_phi: np.ndarray
    xi_v: np.ndarray
    xi_r: np.ndarray
    dh: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.xi_phi, self.xi_v, self.xi_r, self.dh])

    @classmethod
    def from_array(cls, x) -> "ErrorState":
        x = np.asarray(x, dtype=float)
        return cls(x[PHI].copy(), x[VEL].copy(), x[POS].copy(), x[MOM].copy())


@dataclass(frozen=True)
class ReferencePoint:
    pose: ExtendedPose
    omega_r: np.ndarray
    h_r: np.ndarray
    u_r: ControlInput
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "omega_r", np.array(self.omega_r, dtype=float).reshape(3))
        object.__setattr__(self, "h_r", np.array(self.h_r, dtype=float).reshape(3))

    @classmethod
    def from_state(cls, x: VehicleState, u: ControlInput, p: VehicleParams,
                   t: float = 0.0) -> "ReferencePoint":
        return cls(x.pose, x.omega, p.inertia @ x.omega, u, t)

    def as_state(self) -> VehicleState:
        return VehicleState(self.pose, self.omega_r)


@dataclass(frozen=True)
class LinearizedModel:
    A_d: np.ndarray
    B_d: np.ndarray
    dt: float


@dataclass(frozen=True)
class HorizonSchedule:
    segments: Tuple[Tuple[float, int], ...]
    control_horizon: int | None = None
    blocking: str = "uniform"  # how the control horizon's inputs cover the steps

    def __post_init__(self):
        segs = tuple((float(dt), int(n)) for dt, n in self.segments)
        if not segs or any(dt <= 0.0 or n <= 0 for dt, n in segs):
            raise ValueError(f"invalid horizon segments {self.segments!r}")
        object.__setattr__(self, "segments", segs)
        if self.control_horizon is None:
            object.__setattr__(self, "control_horizon", self.n_steps)
        if not 0 < self.control_horizon <= self.n_steps:
            raise ValueError("control horizon must lie in [1, N]")
        if self.blocking not in ("uniform", "hold_last"):
            raise ValueError(f"unknown blocking mode {self.blocking!r}")

    @property
    def n_steps(self) -> int:
        return sum(n for _, n in self.segments)

    @property
    def step_sizes(self) -> np.ndarray:
        return np.concatenate([np.full(n, dt) for dt, n in self.segments])

    @property
    def span(self) -> float:
        return float(sum(dt * n for dt, n in self.segments))


CASE1 = HorizonSchedule(((0.04, 24), (0.16, 12), (0.64, 12)))
CASE2 = HorizonSchedule(((0.02, 48),))


def schedule_times(s: HorizonSchedule) -> List[Tuple[float, float]]:
    """``(t_offset, dt)`` of every horizon step, offsets measured from now."""
    dts = s.step_sizes
    offsets = np.concatenate([[0.0], np.cumsum(dts)[:-1]])
    return list(zip(offsets.tolist(), dts.tolist()))


def error_state(x: VehicleState, ref: ReferencePoint, p: VehicleParams) -> ErrorState:
    """Left-invariant error of ``x`` with respect to ``ref``.

    ``p.inertia`` is the inertia used to form angular momentum; pass the
    controller's estimate here, not the plant's.
    """
    dX = compose(inverse(ref.pose), x.pose)
    xi = log_se23(dX)
    dh = dX.C @ (p.inertia @ x.omega) - ref.h_r
    return ErrorState(xi[PHI], xi[VEL], xi[POS], dh)


def apply_error(ref: ReferencePoint, dx, p: VehicleParams) -> VehicleState:
    """Inverse of :func:`error_state`: the vehicle state whose error is ``dx``."""
    dx = np.asarray(dx, dtype=float)
    dX = exp_se23(dx[:9])
    omega = np.linalg.solve(p.inertia, dX.C.T @ (dx[MOM] + ref.h_r))
    return VehicleState(compose(ref.pose, dX), omega)


def compose_input(du, ref: ReferencePoint, dC) -> ControlInput:
    """Feedforward plus feedback: ``f = f_r + df``, ``m = dC^T m_r + dm``."""
    du = np.asarray(du, dtype=float)
    return ControlInput(ref.u_r.thrust_n + du[0], dC.T @ ref.u_r.torque_nm + du[1:4])


def linearize_continuous(ref: ReferencePoint, p: VehicleParams) -> Tuple[np.ndarray, np.ndarray]:
    """First-order error dynamics ``d(dx)/dt = A dx + B du`` about ``ref``.

    Besides the rigid-body, drag and thrust blocks, the attitude row carries
    the gyroscopic coupling ``J^-1 (J w_r)^x - w_r^x`` and the momentum row the
    parasitic-torque terms; both vanish at ``w_r = 0`` with ``E = F = 0``.
    """
    m = p.mass_kg
    J = p.inertia
    Jinv = p.inertia_inv
    D = p.drag_force
    E = p.drag_torque_E
    F = p.drag_torque_F
    w_r = ref.omega_r
    Wx = cross(w_r)
    vb = ref.pose.C.T @ ref.pose.v  # reference velocity in reference axes
    f_r = ref.u_r.thrust_n
    gyro = Jinv @ cross(J @ w_r)

    A = np.zeros((NX, NX))
    A[PHI, PHI] = gyro - Wx
    A[PHI, MOM] = Jinv
    A[VEL, PHI] = (cross(D @ vb) - D @ cross(vb) + cross(f_r * E3)) / m
    A[VEL, VEL] = -Wx - D / m
    A[POS, VEL] = np.eye(3)
    A[POS, POS] = -Wx
    A[MOM, PHI] = cross(E @ vb) - E @ cross(vb) - F @ gyro + cross(F @ w_r)
    A[MOM, VEL] = -E
    A[MOM, MOM] = -Wx - F @ Jinv

    B = np.zeros((NX, NU))
    B[VEL, 0] = -E3 / m
    B[MOM, 1:4] = np.eye(3)
    return A, B


def discretize(A, B, dt: float) -> LinearizedModel:
    """Exact zero-order-hold discretization (Van Loan block exponential)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    n, nu = B.shape
    M = np.zeros((n + nu, n + nu))
    M[:n, :n] = A
    M[:n, n:] = B
    Md = expm(M * dt)
    return LinearizedModel(Md[:n, :n], Md[:n, n:], float(dt))


def discretize_batch(As, Bs, dt: float) -> List[LinearizedModel]:
    """:func:`discretize` over a list of models with one stacked ``expm`` call."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    As = np.asarray(As, dtype=float)
    Bs = np.asarray(Bs, dtype=float)
    if As.shape[0] == 0:
        return []
    n, nu = Bs.shape[1:]
    M = np.zeros((As.shape[0], n + nu, n + nu))
    M[:, :n, :n] = As
    M[:, :n, n:] = Bs
    Md = expm(M * dt)
    return [LinearizedModel(m[:n, :n], m[:n, n:], float(dt)) for m in Md]
