"""Simulation configuration and its YAML representation.

Every field has a default reproducing the nominal experiment; a YAML file
only needs to list overrides. Schema (all keys optional)::

    vehicle:
      mass_kg: 218.0
      inertia: [26.8, 97.6, 87.2]          # diagonal or 3x3 nested list
      drag_force: [20.0, 20.0, 10.0]       # D, kg/s (dissipative)
      drag_torque_E: [0.01, 0.01, 0.01]
      drag_torque_F: [0.1, 0.1, 0.1]
      gravity: 9.81
      rotor_arm_m: 2.0
      rotor_height_m: 1.0
    initial:
      r: [-30, -5, -20]
      v: [5, 0, -0.5]
      phi: [0, 0, 0]                       # rotation vector of C_ab
      omega: [0, 0, 0]
    target: {r: [0, 0, 0], psi: 0.0}
    wind:
      mean: [0, -5, 0]
      W0: 10.0                             # Dryden wind speed at 20 ft, m/s
      gusts: true
      altitude_m: 20.0
      airspeed_mps: 5.0
    horizon:
      segments: [[0.04, 24], [0.16, 12], [0.64, 12]]
      control_horizon: 10
      blocking: uniform                    # uniform | hold_last
    cost:
      Q: [...12 diagonal entries...]
      R: [...4...]
      P_term: null                         # null -> Q
      w_kiz: 1.0e4
      w_l1: 1.0e4
    constraints:
      alpha: 0.14
      gamma: 0.1
      u_min: [0, -200, -200, -200]
      u_max: [3000, 200, 200, 200]
      x1_b: [0, 0, 1]
      y1_a: [0, 0, 1]
    guidance:
      accel_limit: 1.0
      tail_s: 12.0
      lqr_Q: [...12...]
      lqr_R: [...4...]
    model_error:
      mass_offset_kg: 0.0
      inertia_rotvec: [0, 0, 0]
    monte_carlo:
      phi_std: 0.116
      r_std: 1.0
      v_mean: [5, 0, 0.5]
      v_std: 0.333
      omega_std: 0.029
      wind_mean: [0, -3, 0]
      wind_std: 1.667
      W0_mean: 10.0
      W0_std: 1.0
      mass_std: 10.0
      inertia_std: 0.044
    rate_hz: 50
    substeps: 4
    replan_threshold_s: 0.4
    replan_on: first                       # first | any (which l1 rows count as active)
    duration_s: 60
    capture_pos_m: 0.5
    capture_vel_mps: 0.5
    dist_window: 25
    qp_tol: 1.0e-8
    qp_max_iter: 50
    seed: 0
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict

import numpy as np
import yaml

from .error_lin import HorizonSchedule
from .guidance import FlatOutput, GuidanceConfig, LqrWeights
from .liegroup import exp_so3
from .mpc import ConstraintConfig, CostWeights
from .vehicle import DrydenParams, VehicleParams

CASE1_SEGMENTS = ((0.04, 24), (0.16, 12), (0.64, 12))
CASE2_SEGMENTS = ((0.02, 48),)

DEFAULT_Q = (1.0, 1.0, 1.0, 5.0, 5.0, 5.0, 20.0, 20.0, 20.0, 0.01, 0.01, 0.01)
DEFAULT_R = (2e-6, 1e-3, 1e-3, 1e-3)


def default_weights() -> CostWeights:
    Q = np.diag(DEFAULT_Q)
    return CostWeights(Q=Q, R=np.diag(DEFAULT_R), P_term=Q.copy())


@dataclass(frozen=True)
class MonteCarloSpread:
    phi_std: float = 0.116
    r_std: float = 1.0
    v_mean: tuple = (5.0, 0.0, 0.5)
    v_std: float = 0.333
    omega_std: float = 0.029
    wind_mean: tuple = (0.0, -3.0, 0.0)
    wind_std: float = 1.667
    W0_mean: float = 10.0
    W0_std: float = 1.0
    mass_std: float = 10.0
    inertia_std: float = 0.044

    def zero(self) -> "MonteCarloSpread":
        return dataclasses.replace(self, phi_std=0.0, r_std=0.0, v_std=0.0, omega_std=0.0,
                                   wind_std=0.0, W0_std=0.0, mass_std=0.0, inertia_std=0.0)


@dataclass(frozen=True)
class SimConfig:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    r0: np.ndarray = field(default_factory=lambda: np.array([-30.0, -5.0, -20.0]))
    v0: np.ndarray = field(default_factory=lambda: np.array([5.0, 0.0, -0.5]))
    phi0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    target: FlatOutput = field(default_factory=lambda: FlatOutput(np.zeros(3), 0.0))
    mean_wind: np.ndarray = field(default_factory=lambda: np.array([0.0, -5.0, 0.0]))
    dryden: DrydenParams = field(default_factory=DrydenParams)
    gusts: bool = True
    schedule: HorizonSchedule = field(
        default_factory=lambda: HorizonSchedule(CASE1_SEGMENTS, control_horizon=10))
    weights: CostWeights = field(default_factory=default_weights)
    constraints: ConstraintConfig = field(default_factory=ConstraintConfig)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    mass_offset_kg: float = 0.0
    inertia_rotvec: np.ndarray = field(default_factory=lambda: np.zeros(3))
    monte_carlo: MonteCarloSpread = field(default_factory=MonteCarloSpread)
    rate_hz: float = 50.0
    substeps: int = 4
    replan_threshold_s: float = 0.4
    replan_on: str = "first"  # "first": nearest constrained step; "any": any step
    duration_s: float = 60.0
    capture_pos_m: float = 0.5
    capture_vel_mps: float = 0.5
    dist_window: int = 25
    qp_tol: float = 1e-8
    qp_max_iter: int = 50
    seed: int = 0

    def __post_init__(self):
        for name in ("r0", "v0", "phi0", "omega0", "mean_wind", "inertia_rotvec"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float).reshape(3))
        if self.rate_hz <= 0.0 or self.duration_s <= 0.0:
            raise ValueError("rate and duration must be positive")
        if self.replan_on not in ("first", "any"):
            raise ValueError("replan_on must be 'first' or 'any'")

    @property
    def dt(self) -> float:
        return 1.0 / self.rate_hz

    def estimated_vehicle(self) -> VehicleParams:
        """Parameters the controller believes in (perturbed mass and inertia)."""
        p = self.vehicle
        Cp = exp_so3(self.inertia_rotvec)
        return dataclasses.replace(p, mass_kg=p.mass_kg + self.mass_offset_kg,
                                   inertia=Cp.T @ p.inertia @ Cp)

    def guidance_config(self) -> GuidanceConfig:
        return dataclasses.replace(self.guidance, dt_base=self.dt,
                                   u_min=self.constraints.u_min, u_max=self.constraints.u_max)

    def with_schedule(self, segments, control_horizon=None) -> "SimConfig":
        n_u = control_horizon if control_horizon is not None else self.schedule.control_horizon
        return dataclasses.replace(self, schedule=HorizonSchedule(segments, n_u, self.schedule.blocking))

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)


def _mat3(x):
    a = np.asarray(x, dtype=float)
    return np.diag(a) if a.ndim == 1 else a.reshape(3, 3)


def _diag(x, n):
    a = np.asarray(x, dtype=float)
    return np.diag(a) if a.ndim == 1 else a.reshape(n, n)


def config_from_dict(d: Dict[str, Any] | None) -> SimConfig:
    d = dict(d or {})
    base = SimConfig()
    kw: Dict[str, Any] = {}

    if "vehicle" in d:
        v = dict(d.pop("vehicle"))
        for k in ("inertia", "drag_force", "drag_torque_E", "drag_torque_F"):
            if k in v:
                v[k] = _mat3(v[k])
        kw["vehicle"] = dataclasses.replace(base.vehicle, **v)
    if "initial" in d:
        ini = d.pop("initial")
        for src, dst in (("r", "r0"), ("v", "v0"), ("phi", "phi0"), ("omega", "omega0")):
            if src in ini:
                kw[dst] = ini[src]
    if "target" in d:
        t = d.pop("target")
        kw["target"] = FlatOutput(t.get("r", [0, 0, 0]), float(t.get("psi", 0.0)))
    if "wind" in d:
        w = d.pop("wind")
        if "mean" in w:
            kw["mean_wind"] = w["mean"]
        if "gusts" in w:
            kw["gusts"] = bool(w["gusts"])
        dry = {k: float(w[k]) for k in ("W0", "altitude_m", "airspeed_mps") if k in w}
        kw["dryden"] = dataclasses.replace(base.dryden, **dry)
    if "horizon" in d:
        h = d.pop("horizon")
        segs = tuple(tuple(s) for s in h.get("segments", base.schedule.segments))
        kw["schedule"] = HorizonSchedule(segs, h.get("control_horizon", base.schedule.control_horizon),
                                         h.get("blocking", base.schedule.blocking))
    if "cost" in d:
        c = d.pop("cost")
        Q = _diag(c["Q"], 12) if "Q" in c else base.weights.Q
        R = _diag(c["R"], 4) if "R" in c else base.weights.R
        P = _diag(c["P_term"], 12) if c.get("P_term") is not None else Q
        kw["weights"] = CostWeights(Q, R, P, float(c.get("w_kiz", base.weights.w_kiz)),
                                    float(c.get("w_l1", base.weights.w_l1)))
    if "constraints" in d:
        kw["constraints"] = dataclasses.replace(base.constraints, **d.pop("constraints"))
    if "guidance" in d:
        g = dict(d.pop("guidance"))
        lqr = base.guidance.lqr
        if "lqr_Q" in g or "lqr_R" in g:
            lqr = LqrWeights(_diag(g.pop("lqr_Q"), 12) if "lqr_Q" in g else lqr.Q,
                             _diag(g.pop("lqr_R"), 4) if "lqr_R" in g else lqr.R)
        kw["guidance"] = dataclasses.replace(base.guidance, lqr=lqr, **g)
    if "model_error" in d:
        me = d.pop("model_error")
        if "mass_offset_kg" in me:
            kw["mass_offset_kg"] = float(me["mass_offset_kg"])
        if "inertia_rotvec" in me:
            kw["inertia_rotvec"] = me["inertia_rotvec"]
    if "monte_carlo" in d:
        mc = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.pop("monte_carlo").items()}
        kw["monte_carlo"] = dataclasses.replace(base.monte_carlo, **mc)

    scalar_keys = {f.name for f in dataclasses.fields(SimConfig)}
    for k in list(d):
        if k not in scalar_keys:
            raise KeyError(f"unknown configuration key {k!r}")
        kw[k] = d.pop(k)
    return dataclasses.replace(base, **kw)


def load_config(path) -> SimConfig:
    if path is None:
        return SimConfig()
    with open(Path(path)) as fh:
        return config_from_dict(yaml.safe_load(fh))
