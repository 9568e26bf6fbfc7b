"""Closed-loop simulation, disturbance estimation, replanning and Monte Carlo."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import CASE1_SEGMENTS, CASE2_SEGMENTS, SimConfig
from .error_lin import (NX, PHI, ErrorState, ReferencePoint, error_state, schedule_times)
from .errors import InfeasibleBounds, NumericalBreakdown, SolverFailure
from .guidance import ReferenceTrajectory, model_step, replan
from .liegroup import exp_so3, log_so3
from .mpc import assemble, build_prediction, first_input, predicted_attitudes
from .qp import QpProblem, QpSolution, Status, solve
from .vehicle import (ControlInput, VehicleParams, VehicleState, WindState, dryden_step,
                      propagate)

log = logging.getLogger(__name__)

MAX_CONSECUTIVE_FAILURES = 3
ACTIVE_TOL = 1e-6

CSV_HEADER = (["t", "rx", "ry", "rz", "vx", "vy", "vz", "phi1", "phi2", "phi3",
               "wx", "wy", "wz", "f", "m1", "m2", "m3"]
              + [f"exi_phi{i}" for i in (1, 2, 3)] + [f"exi_v{i}" for i in (1, 2, 3)]
              + [f"exi_r{i}" for i in (1, 2, 3)] + [f"edh{i}" for i in (1, 2, 3)]
              + ["eps1", "eps2", "replan"])


# ----------------------------------------------------------------------------
# disturbance estimate and replan monitor


@dataclass
class DisturbanceEstimate:
    window: deque
    d_hat: np.ndarray

    @classmethod
    def empty(cls, length: int = 25) -> "DisturbanceEstimate":
        return cls(deque(maxlen=length), np.zeros(3))


def estimate_disturbance(prev_state: VehicleState, prev_u: ControlInput, new_state: VehicleState,
                         p: VehicleParams, est: DisturbanceEstimate, dt: float) -> DisturbanceEstimate:
    """Push one velocity residual ``v_k - f(x_{k-1}, u_{k-1}).v`` and re-average."""
    predicted = model_step(prev_state, prev_u, p, dt)
    window = deque(est.window, maxlen=est.window.maxlen)
    window.append(new_state.v - predicted.v)
    return DisturbanceEstimate(window, np.mean(np.array(window), axis=0))


def replan_monitor(l1_history: Sequence[float], gamma: float, threshold_s: float, dt: float) -> bool:
    """True iff the attitude-error norm sat at ``gamma`` for the last ``threshold_s``.

    ``l1_history`` holds one l1 norm per control step, most recent last; each
    active step counts for ``dt`` seconds.
    """
    run = 0
    for v in reversed(l1_history):
        if v >= gamma - ACTIVE_TOL:
            run += 1
        else:
            break
    return run * dt >= threshold_s - 1e-9


# ----------------------------------------------------------------------------
# logging


@dataclass
class RunSummary:
    reached: bool
    time_to_target: float
    replans: int
    rmse: Dict[str, float]
    steps: int
    solver_failures: int
    max_kkt: float
    seed: Optional[int] = None

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class RunLog:
    dt: float
    records: Dict[str, list] = field(default_factory=dict)
    replan_steps: List[int] = field(default_factory=list)
    summary: Optional[RunSummary] = None
    trajectories: List[ReferenceTrajectory] = field(default_factory=list, repr=False)

    def append(self, **rec):
        for k, v in rec.items():
            self.records.setdefault(k, []).append(v)

    def array(self, key) -> np.ndarray:
        return np.asarray(self.records[key])

    def __len__(self):
        return len(self.records.get("t", []))

    def write_csv(self, path) -> None:
        rows = np.column_stack([
            self.array("t"), self.array("r"), self.array("v"), self.array("phi"),
            self.array("omega"), self.array("u"), self.array("err"),
            self.array("eps1"), self.array("eps2"), self.array("replan").astype(float),
        ])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for row in rows:
                w.writerow([f"{x:.10g}" for x in row])


def rmse_channels(err: np.ndarray, du: np.ndarray) -> Dict[str, float]:
    def rms(block):
        return float(np.sqrt(np.mean(np.sum(block ** 2, axis=1)))) if len(block) else float("nan")

    return {
        "attitude": rms(err[:, 0:3]),
        "velocity": rms(err[:, 3:6]),
        "position": rms(err[:, 6:9]),
        "thrust": rms(du[:, 0:1]),
        "torque": rms(du[:, 1:4]),
    }


# ----------------------------------------------------------------------------
# controller


@dataclass
class StepResult:
    u: ControlInput
    solution: Optional[QpSolution]
    problem: Optional[QpProblem]
    dx0: np.ndarray
    l1_max: float
    l1_first: float
    keep_in_lin: float  # smallest linearized keep-in margin over the horizon, slack excluded
    eps: tuple
    pred_phi: Optional[np.ndarray]
    refs: list
    ok: bool


class MpcController:
    """Builds and solves the MPC problem against the current reference."""

    def __init__(self, cfg: SimConfig, p_hat: VehicleParams):
        self.cfg = cfg
        self.p = p_hat
        self.nodes = schedule_times(cfg.schedule)
        self.span = cfg.schedule.span

    def horizon_refs(self, traj: ReferenceTrajectory, t: float):
        idx = [traj.index_at(t + off) for off, _ in self.nodes]
        idx.append(traj.index_at(t + self.span))
        return idx, [traj.points[i] for i in idx]

    def build(self, x: VehicleState, traj: ReferenceTrajectory, t: float):
        idx, refs = self.horizon_refs(traj, t)
        ref0 = traj.at(t)
        dx0 = error_state(x, ref0, self.p).as_array()
        models = [traj.model(i, dt, self.p) for i, (_, dt) in zip(idx, self.nodes)]
        sched = self.cfg.schedule
        pred = build_prediction(models, sched.n_steps, sched.control_horizon, sched.blocking)
        refs = [ref0] + refs[1:]
        prob = assemble(dx0, models, refs, self.cfg.weights, self.cfg.constraints,
                        self.cfg.schedule, pred=pred)
        return prob, pred, dx0, ref0, refs

    def step(self, x: VehicleState, traj: ReferenceTrajectory, t: float) -> StepResult:
        prob, pred, dx0, ref0, refs = self.build(x, traj, t)
        sol = solve(prob, tol=self.cfg.qp_tol, max_iter=self.cfg.qp_max_iter)
        dC = ref0.pose.C.T @ x.C
        lay = prob.layout
        if sol.status is Status.INFEASIBLE:
            return StepResult(None, sol, prob, dx0, np.nan, np.nan, np.nan, (np.nan, np.nan), None,
                              refs, False)
        u = first_input(sol, lay, ref0, dC)
        dmu, _, e1, e2 = lay.unpack(sol.x)
        phis = predicted_attitudes(pred, dmu, dx0)
        steps = np.array(lay.steps)
        l1 = np.abs(phis[steps - 1]).sum(axis=1)
        k = len(steps)  # keep-in rows come first
        margin = prob.W[:k] - prob.G[:k, :lay.n_mu] @ dmu
        ok = sol.status is Status.OPTIMAL or max(sol.kkt_residuals) < 1e-4
        return StepResult(u, sol, prob, dx0, float(l1.max()), float(l1[0]), float(margin.min()),
                          (e1, e2), phis, refs, ok)


def _saturate(u: ControlInput, cfg: SimConfig) -> ControlInput:
    return ControlInput.from_array(np.clip(u.as_array(), cfg.constraints.u_min, cfg.constraints.u_max))


def initial_state(cfg: SimConfig) -> VehicleState:
    return VehicleState.from_parts(exp_so3(cfg.phi0), cfg.v0, cfg.r0, cfg.omega0)


def _keep_in_value(C, cfg: SimConfig) -> float:
    return float(cfg.constraints.x1_b @ C.T @ cfg.constraints.y1_a)


def run_closed_loop(cfg: SimConfig, rng: np.random.Generator | None = None,
                    keep_trajectories: bool = False, keep_problems: bool = False) -> RunLog:
    """Simulate one flight from ``cfg``'s initial condition to target capture."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    dt = cfg.dt
    p_true = cfg.vehicle
    p_hat = cfg.estimated_vehicle()
    gcfg = cfg.guidance_config()
    ctrl = MpcController(cfg, p_hat)
    cons = cfg.constraints

    x = initial_state(cfg)
    wind = WindState(cfg.mean_wind, np.zeros(3), cfg.dryden)
    est = DisturbanceEstimate.empty(cfg.dist_window)
    traj = replan(x, cfg.target, est.d_hat, p_hat, gcfg, t0=0.0)
    runlog = RunLog(dt)
    runlog.replan_steps.append(0)
    if keep_trajectories:
        runlog.trajectories.append(traj)
    if keep_problems:
        runlog.problems = []

    l1_hist: List[float] = []
    u_prev = traj.points[0].u_r
    failures = 0
    total_failures = 0
    replanned = True
    reached = False
    t_reach = float("nan")
    max_kkt = 0.0
    n_steps = int(round(cfg.duration_s / dt))

    for k in range(n_steps):
        t = k * dt
        force_replan = False
        try:
            res = ctrl.step(x, traj, t)
        except (InfeasibleBounds, NumericalBreakdown) as exc:
            log.warning("controller failure at t=%.2f: %s", t, exc)
            res = None
        if res is None or not res.ok:
            failures += 1
            total_failures += 1
            if failures >= MAX_CONSECUTIVE_FAILURES:
                raise SolverFailure(f"{failures} consecutive QP failures at t={t:.2f}")
            u = u_prev
            force_replan = True
            dx0 = error_state(x, traj.at(t), p_hat).as_array()
            eps = (np.nan, np.nan)
            l1 = l1_first = keep_lin = np.nan
        else:
            failures = 0
            u = _saturate(res.u, cfg)
            dx0, eps, l1, l1_first = res.dx0, res.eps, res.l1_max, res.l1_first
            keep_lin = res.keep_in_lin
            max_kkt = max(max_kkt, max(res.solution.kkt_residuals))
            if keep_problems:
                runlog.problems.append((k, res))

        ref0 = traj.at(t)
        du = u.as_array() - np.concatenate([[ref0.u_r.thrust_n],
                                            (ref0.pose.C.T @ x.C).T @ ref0.u_r.torque_nm])
        runlog.append(t=t, r=x.r.copy(), v=x.v.copy(), phi=log_so3(x.C), omega=x.omega.copy(),
                      u=u.as_array(), du=du, err=dx0.copy(), eps1=eps[0], eps2=eps[1],
                      l1_pred=l1, l1_first=l1_first, replan=replanned, d_hat=est.d_hat.copy(),
                      keep_in=_keep_in_value(x.C, cfg), keep_in_lin=keep_lin, ref_r=ref0.pose.r.copy(),
                      wind=wind.total.copy())
        replanned = False

        # plant
        if cfg.gusts:
            wind = dryden_step(wind, dt, rng)
        x_new = propagate(x, u, wind.total, p_true, dt, cfg.substeps)
        est = estimate_disturbance(x, u, x_new, p_hat, est, dt)
        x, u_prev = x_new, u
        t_next = (k + 1) * dt

        if (np.linalg.norm(x.r - cfg.target.r_ref) < cfg.capture_pos_m
                and np.linalg.norm(x.v) < cfg.capture_vel_mps):
            reached = True
            t_reach = t_next
            break

        watched = l1_first if cfg.replan_on == "first" else l1
        l1_hist.append(watched if np.isfinite(watched) else 0.0)
        if force_replan or replan_monitor(l1_hist, cons.gamma, cfg.replan_threshold_s, dt):
            traj = replan(x, cfg.target, est.d_hat, p_hat, gcfg, t0=t_next)
            runlog.replan_steps.append(k + 1)
            if keep_trajectories:
                runlog.trajectories.append(traj)
            l1_hist.clear()
            replanned = True

    err = runlog.array("err")
    runlog.summary = RunSummary(
        reached=reached, time_to_target=t_reach, replans=len(runlog.replan_steps) - 1,
        rmse=rmse_channels(err, runlog.array("du")), steps=len(runlog),
        solver_failures=total_failures, max_kkt=max_kkt, seed=cfg.seed)
    return runlog


# ----------------------------------------------------------------------------
# Monte Carlo


def randomize(cfg: SimConfig, rng: np.random.Generator) -> SimConfig:
    """Draw one Monte Carlo scenario around ``cfg``."""
    s = cfg.monte_carlo
    W0 = max(0.0, s.W0_mean + s.W0_std * rng.standard_normal())
    return cfg.replace(
        phi0=s.phi_std * rng.standard_normal(3),
        r0=cfg.r0 + s.r_std * rng.standard_normal(3),
        v0=np.asarray(s.v_mean) + s.v_std * rng.standard_normal(3),
        omega0=s.omega_std * rng.standard_normal(3),
        mean_wind=np.asarray(s.wind_mean) + s.wind_std * rng.standard_normal(3),
        dryden=dataclasses.replace(cfg.dryden, W0=W0),
        mass_offset_kg=s.mass_std * rng.standard_normal(),
        inertia_rotvec=s.inertia_std * rng.standard_normal(3),
    )


def _run_one(cfg: SimConfig, seed_seq: np.random.SeedSequence, index: int) -> RunSummary:
    scen_rng, sim_rng = (np.random.default_rng(s) for s in seed_seq.spawn(2))
    run_cfg = randomize(cfg, scen_rng)
    try:
        summary = run_closed_loop(run_cfg, rng=sim_rng).summary
    except SolverFailure as exc:
        log.warning("run %d aborted: %s", index, exc)
        summary = RunSummary(False, float("nan"), 0, {}, 0, MAX_CONSECUTIVE_FAILURES, float("nan"))
    summary.seed = index
    return summary


def monte_carlo(cfg: SimConfig, n_runs: int, seed: int | None = None,
                n_jobs: int = 1) -> List[RunSummary]:
    """Independent randomized runs, ordered by run index."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    seed = cfg.seed if seed is None else seed
    children = np.random.SeedSequence(seed).spawn(n_runs)
    if n_jobs == 1:
        return [_run_one(cfg, ss, i) for i, ss in enumerate(children)]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=n_jobs)(delayed(_run_one)(cfg, ss, i) for i, ss in enumerate(children))


def summarize(summaries: Sequence[RunSummary]) -> Dict[str, float]:
    ok = [s for s in summaries if s.rmse]
    times = [s.time_to_target for s in summaries if s.reached]
    out = {
        "runs": len(summaries),
        "reached": sum(s.reached for s in summaries),
        "mean_time_to_target": float(np.mean(times)) if times else float("nan"),
        "mean_replans": float(np.mean([s.replans for s in summaries])),
    }
    for ch in ("attitude", "velocity", "position", "thrust", "torque"):
        out[f"rmse_{ch}"] = float(np.mean([s.rmse[ch] for s in ok])) if ok else float("nan")
    return out


def compare_horizons(cfg: SimConfig, n_runs: int, seed: int | None = None,
                     case1=CASE1_SEGMENTS, case2=CASE2_SEGMENTS, n_jobs: int = 1) -> Dict:
    """Matched-seed Monte Carlo of two horizon schedules.

    Deltas are ``100 * (case1 - case2) / case2`` so negative means case 1 is lower.
    """
    c1 = summarize(monte_carlo(cfg.with_schedule(case1), n_runs, seed, n_jobs))
    c2 = summarize(monte_carlo(cfg.with_schedule(case2), n_runs, seed, n_jobs))
    delta = {}
    for k in c1:
        if k in ("runs", "reached"):
            continue
        same = c1[k] == c2[k] or (np.isnan(c1[k]) and np.isnan(c2[k]))
        delta[k] = 0.0 if same else 100.0 * (c1[k] - c2[k]) / c2[k]
    return {"case1": c1, "case2": c2, "delta_pct": delta}


def write_report(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    raise TypeError(type(o))
