"""Dense LTV-MPC problem construction over a non-uniform horizon.

Decision vector layout: ``[dmu; z; eps1; eps2]`` where ``dmu`` stacks the
``N_u`` optimized input corrections (each held over a block of steps, see
:func:`input_blocks`), ``z`` holds three l1 auxiliaries per constrained step, and
``eps1``/``eps2`` are the shared keep-in and l1 slacks.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .error_lin import NU, NX, PHI, HorizonSchedule, LinearizedModel, ReferencePoint
from .errors import DimensionMismatch, InfeasibleBounds
from .liegroup import cross
from .qp import QpProblem
from .vehicle import ControlInput

Z_REG = 1e-8


@dataclass(frozen=True)
class CostWeights:
    Q: np.ndarray
    R: np.ndarray
    P_term: np.ndarray
    w_kiz: float = 1e4
    w_l1: float = 1e4

    def __post_init__(self):
        for name in ("Q", "R", "P_term"):
            M = np.array(getattr(self, name), dtype=float)
            if not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            object.__setattr__(self, name, M)
        if np.linalg.eigvalsh(self.R).min() <= 0.0:
            raise ValueError("R must be positive definite")
        if min(np.linalg.eigvalsh(self.Q).min(), np.linalg.eigvalsh(self.P_term).min()) < -1e-12:
            raise ValueError("Q and P_term must be positive semidefinite")
        if self.w_kiz <= 0.0 or self.w_l1 <= 0.0:
            raise ValueError("slack weights must be positive")


@dataclass(frozen=True)
class ConstraintConfig:
    alpha: float = 0.14
    gamma: float = 0.1
    u_min: np.ndarray = field(default_factory=lambda: np.array([0.0, -200.0, -200.0, -200.0]))
    u_max: np.ndarray = field(default_factory=lambda: np.array([3000.0, 200.0, 200.0, 200.0]))
    x1_b: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    y1_a: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    steps: tuple | None = None  # state indices 1..N; None selects the default set

    def __post_init__(self):
        for name in ("u_min", "u_max", "x1_b", "y1_a"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float).reshape(-1))
        if not 0.0 < self.alpha < np.pi / 2:
            raise ValueError("alpha must lie in (0, pi/2)")
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        if np.any(self.u_min >= self.u_max):
            raise ValueError("u_min must be below u_max")

    def constrained_steps(self, schedule: HorizonSchedule) -> List[int]:
        if self.steps is not None:
            return sorted(self.steps)
        return default_constrained_steps(schedule)


def default_constrained_steps(schedule: HorizonSchedule) -> List[int]:
    """Every step of the first segment, every other step of later ones."""
    out = []
    i = 0
    for seg, (_, n) in enumerate(schedule.segments):
        for j in range(n):
            i += 1
            if seg == 0 or j % 2 == 1:
                out.append(i)
    return out


@dataclass
class PredictionMatrices:
    """``chi = S dmu + M dx0`` with ``chi = [dx_1; ...; dx_N]``."""

    S: np.ndarray
    M: np.ndarray
    models: List[LinearizedModel]
    n_u: int
    blocking: str = "uniform"

    @property
    def blocks(self) -> np.ndarray:
        return input_blocks(self.N, self.n_u, self.blocking)

    @property
    def N(self) -> int:
        return len(self.models)

    def block(self, i: int):
        """Rows of ``S`` and ``M`` for predicted state ``i`` (1-based)."""
        rows = slice(NX * (i - 1), NX * i)
        return self.S[rows], self.M[rows]


@dataclass(frozen=True)
class Layout:
    n_mu: int
    n_z: int
    steps: tuple

    @property
    def z0(self) -> int:
        return self.n_mu

    @property
    def eps1(self) -> int:
        return self.n_mu + self.n_z

    @property
    def eps2(self) -> int:
        return self.n_mu + self.n_z + 1

    @property
    def n(self) -> int:
        return self.n_mu + self.n_z + 2

    def pack(self, dmu, z, eps1, eps2) -> np.ndarray:
        return np.concatenate([np.ravel(dmu), np.ravel(z), [eps1, eps2]])

    def unpack(self, x):
        x = np.asarray(x)
        return (x[:self.n_mu], x[self.z0:self.eps1].reshape(-1, 3),
                float(x[self.eps1]), float(x[self.eps2]))


def input_blocks(N: int, n_u: int, mode: str = "uniform") -> np.ndarray:
    """Index of the optimized input applied at each of the ``N`` steps.

    ``"hold_last"`` frees the first ``n_u - 1`` steps and holds the last
    input to the end; ``"uniform"`` splits the steps into ``n_u`` contiguous
    blocks of (nearly) equal length.
    """
    j = np.arange(N)
    if mode == "hold_last":
        return np.minimum(j, n_u - 1)
    if mode == "uniform":
        return (j * n_u) // N
    raise ValueError(f"unknown blocking mode {mode!r}")


def blocking_matrix(N: int, n_u: int, mode: str = "uniform") -> np.ndarray:
    """Maps the ``n_u`` optimized inputs to all ``N`` horizon inputs."""
    T = np.zeros((NU * N, NU * n_u))
    blocks = input_blocks(N, n_u, mode)
    for j in range(N):
        b = blocks[j]
        T[NU * j:NU * (j + 1), NU * b:NU * (b + 1)] = np.eye(NU)
    return T


def build_prediction(models: Sequence[LinearizedModel], N: int, n_u: int,
                     blocking: str = "uniform") -> PredictionMatrices:
    if len(models) != N:
        raise DimensionMismatch(f"expected {N} models, got {len(models)}")
    if not 0 < n_u <= N:
        raise DimensionMismatch("control horizon must lie in [1, N]")
    S = np.zeros((NX * N, NU * n_u))
    M = np.zeros((NX * N, NX))
    S_prev = np.zeros((NX, NU * n_u))
    M_prev = np.eye(NX)
    blocks = input_blocks(N, n_u, blocking)
    for i, mdl in enumerate(models):
        b = blocks[i]
        S_i = mdl.A_d @ S_prev
        S_i[:, NU * b:NU * (b + 1)] += mdl.B_d
        M_i = mdl.A_d @ M_prev
        S[NX * i:NX * (i + 1)] = S_i
        M[NX * i:NX * (i + 1)] = M_i
        S_prev, M_prev = S_i, M_i
    return PredictionMatrices(S, M, list(models), n_u, blocking)


def stage_scales(schedule: HorizonSchedule) -> np.ndarray:
    dts = schedule.step_sizes
    return dts / dts[0]


def build_cost(pred: PredictionMatrices, w: CostWeights, schedule: HorizonSchedule, dx0):
    """Condensed ``(H, F)`` on ``dmu`` for ``0.5 dmu'H dmu + F'dmu``."""
    N = pred.N
    if schedule.n_steps != N:
        raise DimensionMismatch("schedule and prediction lengths differ")
    scale = stage_scales(schedule)
    qdiag = [scale[i] * w.Q for i in range(1, N)] + [w.P_term]
    S, M = pred.S, pred.M
    QS = np.empty_like(S)
    QM = np.empty_like(M)
    for i, Qi in enumerate(qdiag):
        rows = slice(NX * i, NX * (i + 1))
        QS[rows] = Qi @ S[rows]
        QM[rows] = Qi @ M[rows]
    # blocked inputs accumulate the weight of every step they cover
    r_scale = np.zeros(pred.n_u)
    np.add.at(r_scale, pred.blocks, scale)
    Rbar = np.kron(np.diag(r_scale), w.R)
    H = S.T @ QS + Rbar
    H = 0.5 * (H + H.T)
    F = QS.T @ (M @ np.asarray(dx0, dtype=float))
    return H, F


def stacked_cost(pred: PredictionMatrices, w: CostWeights, schedule: HorizonSchedule,
                 dx0, dmu) -> float:
    """Direct summation of the horizon cost (halved), for checking ``build_cost``."""
    scale = stage_scales(schedule)
    N = pred.N
    u_all = blocking_matrix(N, pred.n_u, pred.blocking) @ dmu
    x = np.asarray(dx0, dtype=float)
    J = 0.0
    for i, mdl in enumerate(pred.models):
        u = u_all[NU * i:NU * (i + 1)]
        if i > 0:
            J += scale[i] * x @ w.Q @ x
        J += scale[i] * u @ w.R @ u
        x = mdl.A_d @ x + mdl.B_d @ u
    J += x @ w.P_term @ x
    return 0.5 * J


def keep_in_constraint(pred: PredictionMatrices, refs: Sequence[ReferencePoint],
                       cfg: ConstraintConfig, dx0, steps: Sequence[int]):
    """Linearized keep-in rows ``G_mu dmu + g_eps eps1 <= w``.

    ``refs[i]`` is the reference at predicted state ``i`` (``refs[0]`` is now).
    Returns ``(G_mu, g_eps, w)`` with one row per constrained step.
    """
    dx0 = np.asarray(dx0, dtype=float)
    n_mu = pred.S.shape[1]
    G = np.zeros((len(steps), n_mu))
    W = np.zeros(len(steps))
    x1 = cfg.x1_b
    ca = np.cos(cfg.alpha)
    for row, i in enumerate(steps):
        c = refs[i].pose.C.T @ cfg.y1_a
        g = x1 @ cross(c)
        S_i, M_i = pred.block(i)
        G[row] = -g @ S_i[PHI]
        W[row] = -ca + x1 @ c + g @ (M_i[PHI] @ dx0)
    return G, -np.ones(len(steps)), W


def l1_constraint(pred: PredictionMatrices, cfg: ConstraintConfig, dx0, steps: Sequence[int]):
    """Rows for ``sum z <= gamma + eps2`` and ``-z <= xi_phi <= z`` per step.

    Returns ``(G_mu, G_z, g_eps, w)``; ``G_z`` has three columns per step.
    """
    dx0 = np.asarray(dx0, dtype=float)
    n_mu = pred.S.shape[1]
    k = len(steps)
    G_mu = np.zeros((7 * k, n_mu))
    G_z = np.zeros((7 * k, 3 * k))
    g_eps = np.zeros(7 * k)
    W = np.zeros(7 * k)
    for s, i in enumerate(steps):
        S_i, M_i = pred.block(i)
        PS = S_i[PHI]
        PM = M_i[PHI] @ dx0
        r0 = 7 * s
        zc = slice(3 * s, 3 * s + 3)
        G_z[r0, zc] = 1.0
        g_eps[r0] = -1.0
        W[r0] = cfg.gamma
        G_mu[r0 + 1:r0 + 4] = PS
        G_z[r0 + 1:r0 + 4, zc] = -np.eye(3)
        W[r0 + 1:r0 + 4] = -PM
        G_mu[r0 + 4:r0 + 7] = -PS
        G_z[r0 + 4:r0 + 7, zc] = -np.eye(3)
        W[r0 + 4:r0 + 7] = PM
    return G_mu, G_z, g_eps, W


def input_constraint(refs: Sequence[ReferencePoint], cfg: ConstraintConfig, n_u: int,
                     first_steps: Sequence[int] | None = None):
    """Box rows ``[I; -I] dmu <= [u_max - u_r; u_r - u_min]``.

    Block ``j`` is checked against the feedforward ``refs[first_steps[j]]``
    (default: ``refs[j]``), the reference where the block starts.
    """
    first_steps = range(n_u) if first_steps is None else first_steps
    du_max = []
    du_min = []
    for j in first_steps:
        ur = refs[j].u_r.as_array()
        if np.any(ur > cfg.u_max + 1e-9) or np.any(ur < cfg.u_min - 1e-9):
            raise InfeasibleBounds(f"reference input {ur} outside actuator limits")
        du_max.append(cfg.u_max - ur)
        du_min.append(cfg.u_min - ur)
    du_max = np.concatenate(du_max)
    du_min = np.concatenate(du_min)
    I = np.eye(NU * n_u)
    return np.vstack([I, -I]), np.concatenate([du_max, -du_min])


def assemble(dx0, models: Sequence[LinearizedModel], refs: Sequence[ReferencePoint],
             w: CostWeights, cfg: ConstraintConfig, schedule: HorizonSchedule,
             pred: PredictionMatrices | None = None) -> QpProblem:
    """Full QP for one control step.

    ``refs`` must hold ``N + 1`` points: the reference at every horizon node,
    ending with the terminal one.
    """
    dx0 = np.asarray(dx0, dtype=float)
    N = schedule.n_steps
    n_u = schedule.control_horizon
    if pred is None:
        pred = build_prediction(models, N, n_u, schedule.blocking)
    if len(refs) != N + 1:
        raise DimensionMismatch(f"need {N + 1} reference points, got {len(refs)}")
    steps = tuple(cfg.constrained_steps(schedule))
    layout = Layout(NU * n_u, 3 * len(steps), steps)
    n = layout.n

    H_mu, F_mu = build_cost(pred, w, schedule, dx0)
    H = np.zeros((n, n))
    F = np.zeros(n)
    H[:layout.n_mu, :layout.n_mu] = H_mu
    F[:layout.n_mu] = F_mu
    zi = np.arange(layout.z0, layout.eps1)
    H[zi, zi] = Z_REG
    H[layout.eps1, layout.eps1] = w.w_kiz
    H[layout.eps2, layout.eps2] = w.w_l1

    blocks = []
    G_k, g1, W_k = keep_in_constraint(pred, refs, cfg, dx0, steps)
    Gk = np.zeros((len(steps), n))
    Gk[:, :layout.n_mu] = G_k
    Gk[:, layout.eps1] = g1
    blocks.append((Gk, W_k))

    G_mu, G_z, g2, W_l = l1_constraint(pred, cfg, dx0, steps)
    Gl = np.zeros((G_mu.shape[0], n))
    Gl[:, :layout.n_mu] = G_mu
    Gl[:, layout.z0:layout.eps1] = G_z
    Gl[:, layout.eps2] = g2
    blocks.append((Gl, W_l))

    starts = np.searchsorted(pred.blocks, np.arange(n_u))
    G_u, W_u = input_constraint(refs, cfg, n_u, starts)
    Gu = np.zeros((G_u.shape[0], n))
    Gu[:, :layout.n_mu] = G_u
    blocks.append((Gu, W_u))

    Ge = np.zeros((2, n))
    Ge[0, layout.eps1] = -1.0
    Ge[1, layout.eps2] = -1.0
    blocks.append((Ge, np.zeros(2)))

    G = np.vstack([b[0] for b in blocks])
    W = np.concatenate([b[1] for b in blocks])
    return QpProblem(H, F, G, W, layout=layout)


def predicted_attitudes(pred: PredictionMatrices, dmu, dx0) -> np.ndarray:
    chi = pred.S @ dmu + pred.M @ np.asarray(dx0, dtype=float)
    return chi.reshape(-1, NX)[:, PHI]


def first_input(solution, layout: Layout, ref0: ReferencePoint, dC) -> ControlInput:
    """Feedforward plus the first optimized correction.

    ``dC = C_ref^T C`` is taken from the measured error; the reference torque
    is resolved into body axes through ``dC^T``.
    """
    x = solution.x if hasattr(solution, "x") else np.asarray(solution)
    du = x[:NU]
    return ControlInput(ref0.u_r.thrust_n + du[0], np.asarray(dC).T @ ref0.u_r.torque_nm + du[1:4])
