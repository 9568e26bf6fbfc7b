"""Independent reference computations used by the test-suite."""
from __future__ import annotations

import itertools
import math

import numpy as np

from tandem_mpc.error_lin import ReferencePoint, apply_error, error_state
from tandem_mpc.liegroup import exp_so3
from tandem_mpc.vehicle import ControlInput, VehicleParams, VehicleState, step_rk4


def expm_taylor(M, order=30, squarings=None):
    """Matrix exponential by scaling-and-squaring of a truncated Taylor series."""
    M = np.asarray(M, dtype=float)
    nrm = np.linalg.norm(M, 1)
    if squarings is None:
        squarings = max(0, int(math.ceil(math.log2(nrm))) + 2) if nrm > 0 else 0
    Ms = M / 2.0 ** squarings
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, order + 1):
        term = term @ Ms / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


def random_dcm(rng, scale=1.0):
    return exp_so3(scale * rng.standard_normal(3))


def random_reference(rng, p: VehicleParams, omega_scale=0.3, speed=5.0):
    C = random_dcm(rng)
    v = speed * rng.standard_normal(3)
    r = 10.0 * rng.standard_normal(3)
    w = omega_scale * rng.standard_normal(3)
    u = ControlInput(p.hover_thrust * (1.0 + 0.2 * rng.standard_normal()),
                     50.0 * rng.standard_normal(3))
    return ReferencePoint.from_state(VehicleState.from_parts(C, v, r, w), u, p)


def error_rate(ref: ReferencePoint, dx, du, p: VehicleParams, h=1e-4):
    """Time derivative of the error state under the nonlinear model.

    Both the vehicle and the reference are advanced with the model dynamics
    (no wind) over +-h and the error is differenced centrally. The vehicle
    input is composed from the reference feedforward exactly as the
    controller does.
    """
    dx = np.asarray(dx, dtype=float)
    x = apply_error(ref, dx, p)
    dC = x.C.T @ ref.pose.C
    dC = dC.T  # = C_ref^T C
    u = ControlInput(ref.u_r.thrust_n + du[0], dC.T @ ref.u_r.torque_nm + du[1:4])
    xr = ref.as_state()
    zero = np.zeros(3)

    def err_at(dt):
        x1 = step_rk4(x, u, zero, p, dt, reorthonormalize=False)
        r1 = step_rk4(xr, ref.u_r, zero, p, dt, reorthonormalize=False)
        ref1 = ReferencePoint.from_state(r1, ref.u_r, p)
        return error_state(x1, ref1, p).as_array()

    return (err_at(h) - err_at(-h)) / (2.0 * h)


def fd_jacobians(ref: ReferencePoint, p: VehicleParams, eps=1e-5, h=1e-4):
    A = np.zeros((12, 12))
    B = np.zeros((12, 4))
    zx = np.zeros(12)
    zu = np.zeros(4)
    for i in range(12):
        e = np.zeros(12)
        e[i] = eps
        A[:, i] = (error_rate(ref, e, zu, p, h) - error_rate(ref, -e, zu, p, h)) / (2 * eps)
    for i in range(4):
        e = np.zeros(4)
        e[i] = eps
        B[:, i] = (error_rate(ref, zx, e, p, h) - error_rate(ref, zx, -e, p, h)) / (2 * eps)
    return A, B


def riccati_textbook(A, B, Q, R, P_N, N):
    """Backward Riccati recursion written out long-hand (gains for u = -K x)."""
    P = P_N.copy()
    gains = [None] * N
    for k in reversed(range(N)):
        BtP = B.T @ P
        K = np.linalg.inv(R + BtP @ B) @ (BtP @ A)
        P = Q + A.T @ P @ A - A.T @ P @ B @ K
        gains[k] = K
    return gains


def qp_enumerate(H, F, G, W, tol=1e-9):
    """Brute-force active-set enumeration for a strictly convex QP.

    Solves the equality-constrained KKT system for every subset of rows and
    keeps the best primal/dual feasible point.
    """
    n = H.shape[0]
    m = G.shape[0]
    best = None
    for k in range(0, min(m, n) + 1):
        for active in itertools.combinations(range(m), k):
            idx = list(active)
            Ga = G[idx]
            K = np.block([[H, Ga.T], [Ga, np.zeros((k, k))]])
            rhs = np.concatenate([-F, W[idx]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x = sol[:n]
            lam = sol[n:]
            if np.any(G @ x - W > tol) or np.any(lam < -tol):
                continue
            obj = 0.5 * x @ H @ x + F @ x
            if best is None or obj < best[0] - 1e-12:
                duals = np.zeros(m)
                duals[idx] = lam
                best = (obj, x, duals)
    return best
