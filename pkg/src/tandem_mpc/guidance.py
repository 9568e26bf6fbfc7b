"""Reference trajectory generation.

A per-axis quartic gives a minimum-time position/velocity profile toward the
target; the flat map turns it into attitude, rates and inputs; a
finite-horizon LQR then rolls the model forward in closed loop around that
coarse profile, injecting the current disturbance estimate at every step.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .error_lin import (ReferencePoint, compose_input, discretize, discretize_batch,
                        error_state, linearize_continuous)
from .errors import InfeasibleStart, RiccatiDivergence, SingularFlatMap
from .liegroup import ExtendedPose
from .vehicle import E3, ControlInput, VehicleParams, VehicleState, propagate

GRID_POINTS = 100


@dataclass(frozen=True)
class FlatOutput:
    r_ref: np.ndarray
    psi_ref: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "r_ref", np.array(self.r_ref, dtype=float).reshape(3))


@dataclass(frozen=True)
class QuarticTrajectory:
    """``r(t) = sum_k coeffs[:, k] t**k`` for ``0 <= t <= T``.

    Past ``T`` the profile continues at the terminal velocity with zero
    acceleration.
    """

    coeffs: np.ndarray  # (3, 5)
    T: float

    def position(self, t: float) -> np.ndarray:
        c = self.coeffs
        if t > self.T:
            return self.position(self.T) + (t - self.T) * self.velocity(self.T)
        return c[:, 0] + t * (c[:, 1] + t * (c[:, 2] + t * (c[:, 3] + t * c[:, 4])))

    def velocity(self, t: float) -> np.ndarray:
        c = self.coeffs
        t = min(t, self.T)
        return c[:, 1] + t * (2 * c[:, 2] + t * (3 * c[:, 3] + t * 4 * c[:, 4]))

    def accel(self, t: float) -> np.ndarray:
        if t > self.T:
            return np.zeros(3)
        c = self.coeffs
        return 2 * c[:, 2] + t * (6 * c[:, 3] + t * 12 * c[:, 4])

    def max_accel(self, n: int = GRID_POINTS) -> float:
        return _max_accel(self.coeffs, self.T, n)

    def sample(self, ts) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Position, velocity and acceleration at every time in ``ts``, each ``(K, 3)``."""
        ts = np.asarray(ts, dtype=float)
        tc = np.minimum(ts, self.T)[:, None]
        c = self.coeffs
        r = c[:, 0] + tc * (c[:, 1] + tc * (c[:, 2] + tc * (c[:, 3] + tc * c[:, 4])))
        v = c[:, 1] + tc * (2 * c[:, 2] + tc * (3 * c[:, 3] + tc * 4 * c[:, 4]))
        a = 2 * c[:, 2] + tc * (6 * c[:, 3] + tc * 12 * c[:, 4])
        past = ts > self.T
        r = r + np.where(past, ts - self.T, 0.0)[:, None] * v
        a[past] = 0.0
        return r, v, a


def _quartic_coeffs(r0, v0, a0, rf, vf, T):
    dr = rf - (r0 + v0 * T + 0.5 * a0 * T * T)
    dv = vf - (v0 + a0 * T)
    c3 = (4.0 * dr - T * dv) / T ** 3
    c4 = (T * dv - 3.0 * dr) / T ** 4
    return np.column_stack([r0, v0, 0.5 * a0, c3, c4])


def _max_accel(coeffs, T, n=GRID_POINTS) -> float:
    t = np.linspace(0.0, T, n)
    a = (2 * coeffs[:, 2][:, None] + 6 * coeffs[:, 3][:, None] * t
         + 12 * coeffs[:, 4][:, None] * t * t)
    return float(np.max(np.linalg.norm(a, axis=0)))


def plan_quartic(start, target, accel_limit: float, T_min: float = 0.5,
                 T_max: float = 200.0, tol: float = 1e-6) -> QuarticTrajectory:
    """Shortest-duration quartic meeting the acceleration bound on a 100-point grid.

    ``start = (r, v, a)`` and ``target = (r_f, v_f)``; the terminal
    acceleration is left free. The bound applies to the Euclidean norm of the
    acceleration vector.
    """
    if accel_limit <= 0.0:
        raise ValueError("accel_limit must be positive")
    r0, v0, a0 = (np.asarray(s, dtype=float).reshape(3) for s in start)
    rf, vf = (np.asarray(s, dtype=float).reshape(3) for s in target)
    if not all(np.all(np.isfinite(s)) for s in (r0, v0, a0)):
        raise InfeasibleStart("non-finite start state")

    def feasible(T):
        return _max_accel(_quartic_coeffs(r0, v0, a0, rf, vf, T), T) <= accel_limit

    if feasible(T_min):
        T = T_min
    else:
        grid = np.geomspace(T_min, T_max, 400)
        hi = next((T for T in grid if feasible(T)), None)
        if hi is None:
            T = T_max
        else:
            lo = grid[max(0, np.searchsorted(grid, hi) - 1)]
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if feasible(mid):
                    hi = mid
                else:
                    lo = mid
            T = hi
    return QuarticTrajectory(_quartic_coeffs(r0, v0, a0, rf, vf, T), float(T))


def attitude_from_thrust_axis(b3, psi: float) -> np.ndarray:
    """DCM whose third column is ``b3`` and whose heading is ``psi``.

    ``b3`` may also be a ``(K, 3)`` stack, giving ``(K, 3, 3)``.
    """
    b3 = np.asarray(b3, dtype=float)
    b3 = b3 / np.linalg.norm(b3, axis=-1, keepdims=True)
    xc = np.array([np.cos(psi), np.sin(psi), 0.0])
    b2 = np.cross(b3, xc)
    b2 /= np.linalg.norm(b2, axis=-1, keepdims=True)
    b1 = np.cross(b2, b3)
    return np.stack([b1, b2, b3], axis=-1)


def _thrust_and_attitude(a, v, psi, p: VehicleParams, dist_accel):
    """Thrust magnitude and attitude for stacked accelerations and velocities.

    Solves ``f C e3 = m (g e3 - a + d) - C D C^T v`` by fixed-point iteration
    on the drag term.
    """
    spec = p.gravity * E3 - a + dist_accel
    if np.min(np.linalg.norm(spec, axis=-1)) < 0.1:
        raise SingularFlatMap("specific force too small for a thrust direction")
    D = p.drag_force

    def thrust_vec(C):
        vb = np.einsum("kji,kj->ki", C, v)
        return p.mass_kg * spec - np.einsum("kij,kj->ki", C, vb @ D.T)

    C = attitude_from_thrust_axis(spec, psi)
    for _ in range(3):
        C = attitude_from_thrust_axis(thrust_vec(C), psi)
    return np.linalg.norm(thrust_vec(C), axis=-1), C


def _flat_states(traj: QuarticTrajectory, psi: float, ts, p: VehicleParams, h: float, dist_accel):
    """Vectorized flat map; rates come from central differences with step ``h``."""
    ts = np.asarray(ts, dtype=float)
    K = ts.size
    grid = np.concatenate([ts - h, ts, ts + h])
    r, v, a = traj.sample(grid)
    f, C = _thrust_and_attitude(a, v, psi, p, dist_accel)
    Cm, C0, Cp = C[:K], C[K:2 * K], C[2 * K:]
    f = f[K:2 * K]
    r, v = r[K:2 * K], v[K:2 * K]

    def rel_log(Ca, Cb):
        return Rotation.from_matrix(np.einsum("kji,kjl->kil", Ca, Cb)).as_rotvec()

    w = rel_log(Cm, Cp) / (2.0 * h)
    w_dot = (rel_log(C0, Cp) - rel_log(Cm, C0)) / (h * h)
    J = p.inertia
    Jw = w @ J.T
    vb = np.einsum("kji,kj->ki", C0, v)
    m = (w_dot @ J.T + np.cross(w, Jw) + vb @ p.drag_torque_E.T + w @ p.drag_torque_F.T)
    return C0, v, r, w, f, m


def flat_to_state(traj: QuarticTrajectory, psi: float, t: float, p: VehicleParams,
                  h: float = 0.02, dist_accel=None) -> Tuple[VehicleState, ControlInput]:
    """State and input realizing the flat outputs at time ``t``.

    Angular rate and acceleration come from central differences of the
    attitude with step ``h``; ``dist_accel`` is an extra acceleration the
    thrust has to cancel (the disturbance estimate divided by the step).
    """
    dist_accel = np.zeros(3) if dist_accel is None else np.asarray(dist_accel, dtype=float)
    C, v, r, w, f, m = _flat_states(traj, psi, [t], p, h, dist_accel)
    return VehicleState.from_parts(C[0], v[0], r[0], w[0]), ControlInput(f[0], m[0])


@dataclass
class ReferenceTrajectory:
    points: List[ReferencePoint]
    dt_base: float
    _model_cache: dict = field(default_factory=dict, repr=False)

    @property
    def t0(self) -> float:
        return self.points[0].t

    @property
    def duration(self) -> float:
        return self.points[-1].t - self.t0

    def __len__(self) -> int:
        return len(self.points)

    def index_at(self, t: float) -> int:
        k = int(round((t - self.t0) / self.dt_base))
        return min(max(k, 0), len(self.points) - 1)

    def at(self, t: float) -> ReferencePoint:
        return self.points[self.index_at(t)]

    def model(self, k: int, dt: float, p: VehicleParams):
        """Discretized linearization about point ``k`` (memoized)."""
        key = (k, round(dt, 12))
        mdl = self._model_cache.get(key)
        if mdl is None:
            A, B = linearize_continuous(self.points[k], p)
            mdl = discretize(A, B, dt)
            self._model_cache[key] = mdl
        return mdl

    def models(self, dt: float, p: VehicleParams):
        """Models about every point, discretized in one batch and memoized."""
        todo = [k for k in range(len(self.points)) if (k, round(dt, 12)) not in self._model_cache]
        if todo:
            AB = [linearize_continuous(self.points[k], p) for k in todo]
            for k, mdl in zip(todo, discretize_batch([a for a, _ in AB], [b for _, b in AB], dt)):
                self._model_cache[(k, round(dt, 12))] = mdl
        return [self._model_cache[(k, round(dt, 12))] for k in range(len(self.points))]


@dataclass(frozen=True)
class LqrGains:
    K: List[np.ndarray]

    @property
    def horizon(self) -> int:
        return len(self.K)


@dataclass(frozen=True)
class LqrWeights:
    Q: np.ndarray = field(default_factory=lambda: np.diag([10.0] * 3 + [1.0] * 3 + [10.0] * 3 + [0.1] * 3))
    R: np.ndarray = field(default_factory=lambda: np.diag([1e-3, 1.0, 1.0, 1.0]))
    P: np.ndarray | None = None

    @property
    def P_term(self) -> np.ndarray:
        return self.Q if self.P is None else self.P


def riccati_gains(models: Sequence, Q, R, P_N) -> LqrGains:
    """Backward recursion; ``K[k]`` gives ``du = -K[k] dx``."""
    P = np.array(P_N, dtype=float)
    gains = [None] * len(models)
    for k in range(len(models) - 1, -1, -1):
        A, B = models[k].A_d, models[k].B_d
        BtP = B.T @ P
        K = np.linalg.solve(R + BtP @ B, BtP @ A)
        P = Q + A.T @ P @ (A - B @ K)
        P = 0.5 * (P + P.T)
        if not np.all(np.isfinite(K)) or not np.all(np.isfinite(P)):
            raise RiccatiDivergence(f"non-finite Riccati iterate at step {k}")
        gains[k] = K
    return LqrGains(gains)


def model_step(x: VehicleState, u: ControlInput, p: VehicleParams, dt: float, dist=None,
               substeps: int = 1) -> VehicleState:
    """Modeled one-step dynamics ``f(x, u) + d`` (no wind, velocity-channel ``d``)."""
    x1 = propagate(x, u, np.zeros(3), p, dt, substeps)
    if dist is not None:
        x1 = VehicleState.from_parts(x1.C, x1.v + dist, x1.r, x1.omega)
    return x1


def lqr_refine(coarse: ReferenceTrajectory, dist, p: VehicleParams,
               weights: LqrWeights | None = None, start: VehicleState | None = None,
               u_min=None, u_max=None) -> ReferenceTrajectory:
    """Closed-loop rollout of the model around ``coarse``.

    The rollout begins at ``start`` (default: the first coarse point) and
    applies ``u = u_coarse (+) -K dx`` with inputs clipped to the actuator
    box, adding ``dist`` to the velocity after every step.
    """
    if not coarse.points:
        raise ValueError("coarse trajectory is empty")
    weights = weights or LqrWeights()
    dt = coarse.dt_base
    dist = np.zeros(3) if dist is None else np.asarray(dist, dtype=float)
    n = len(coarse.points)
    models = coarse.models(dt, p)
    gains = riccati_gains(models, weights.Q, weights.R, weights.P_term)

    x = start if start is not None else coarse.points[0].as_state()
    out = []
    for k, ref in enumerate(coarse.points):
        dx = error_state(x, ref, p).as_array()
        dC = ref.pose.C.T @ x.C
        u = compose_input(-gains.K[k] @ dx, ref, dC)
        if u_min is not None:
            u = ControlInput.from_array(np.clip(u.as_array(), u_min, u_max))
        out.append(ReferencePoint(x.pose, x.omega, p.inertia @ x.omega, u, ref.t))
        if k + 1 < n:
            x = model_step(x, u, p, dt, dist)
    return ReferenceTrajectory(out, dt)


def sample_flat(traj: QuarticTrajectory, psi: float, p: VehicleParams, dt: float,
                duration: float, t0: float = 0.0, dist_accel=None) -> ReferenceTrajectory:
    """Flat-map samples every ``dt`` over ``[0, duration]``, stamped from ``t0``."""
    dist_accel = np.zeros(3) if dist_accel is None else np.asarray(dist_accel, dtype=float)
    n = int(round(duration / dt)) + 1
    ts = dt * np.arange(n)
    C, v, r, w, f, m = _flat_states(traj, psi, ts, p, dt, dist_accel)
    h = w @ p.inertia.T
    pts = [ReferencePoint(ExtendedPose(C[k], v[k], r[k]), w[k], h[k], ControlInput(f[k], m[k]),
                          t0 + ts[k]) for k in range(n)]
    return ReferenceTrajectory(pts, dt)


@dataclass(frozen=True)
class GuidanceConfig:
    accel_limit: float = 1.0
    dt_base: float = 0.02
    tail_s: float = 12.0  # reference kept beyond the quartic end
    lqr: LqrWeights = field(default_factory=LqrWeights)
    u_min: np.ndarray | None = None
    u_max: np.ndarray | None = None


def replan(current: VehicleState, target: FlatOutput, dist, p: VehicleParams,
           cfg: GuidanceConfig | None = None, t0: float = 0.0, accel=None) -> ReferenceTrajectory:
    """New reference from ``current`` to ``target``; its first point is ``current``."""
    cfg = cfg or GuidanceConfig()
    dist = np.zeros(3) if dist is None else np.asarray(dist, dtype=float)
    a0 = np.zeros(3) if accel is None else np.asarray(accel, dtype=float)
    quartic = plan_quartic((current.r, current.v, a0), (target.r_ref, np.zeros(3)),
                           cfg.accel_limit)
    coarse = sample_flat(quartic, target.psi_ref, p, cfg.dt_base, quartic.T + cfg.tail_s,
                         t0=t0, dist_accel=dist / cfg.dt_base)
    return lqr_refine(coarse, dist, p, cfg.lqr, start=current, u_min=cfg.u_min, u_max=cfg.u_max)
