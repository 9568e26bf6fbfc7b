"""SO(3) and SE_2(3) primitives.

Conventions: a DCM ``C`` maps body-frame components to inertial-frame
components. An extended pose bundles ``(C, v, r)`` and embeds in a 5x5 matrix

    [[C, v, r],
     [0, 1, 0],
     [0, 0, 1]]

Tangent vectors on SE_2(3) are ordered ``[xi_phi, xi_v, xi_r]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AngleNearPi

SMALL_ANGLE = 1e-4
_PI_MARGIN = 1e-6


def cross(u):
    """Skew-symmetric matrix such that ``cross(u) @ w == np.cross(u, w)``."""
    u = np.asarray(u, dtype=float)
    return np.array([[0.0, -u[2], u[1]],
                     [u[2], 0.0, -u[0]],
                     [-u[1], u[0], 0.0]])


def vee(S):
    """Inverse of :func:`cross` (uses the antisymmetric part only)."""
    return 0.5 * np.array([S[2, 1] - S[1, 2], S[0, 2] - S[2, 0], S[1, 0] - S[0, 1]])


def exp_so3(phi):
    phi = np.asarray(phi, dtype=float)
    a = math.sqrt(phi @ phi)
    P = cross(phi)
    if a < SMALL_ANGLE:
        a2 = a * a
        return np.eye(3) + (1.0 - a2 / 6.0) * P + (0.5 - a2 / 24.0) * (P @ P)
    return np.eye(3) + (math.sin(a) / a) * P + ((1.0 - math.cos(a)) / (a * a)) * (P @ P)


def log_so3(C):
    """Rotation vector of a DCM.

    Raises
    ------
    AngleNearPi
        If the rotation angle is within ``1e-6`` (in trace) of pi; the axis is
        ill-conditioned there and callers are expected to stay far away.
    """
    C = np.asarray(C, dtype=float)
    tr = np.trace(C)
    if tr <= -1.0 + _PI_MARGIN:
        raise AngleNearPi(f"trace(C) = {tr:.9f}; rotation angle too close to pi")
    w = vee(C)  # = sin(a) * axis
    s = math.sqrt(w @ w)
    c = 0.5 * (tr - 1.0)
    a = math.atan2(s, c)
    if a < SMALL_ANGLE:
        return (1.0 + s * s / 6.0) * w
    return (a / s) * w


def left_jacobian_so3(phi):
    phi = np.asarray(phi, dtype=float)
    a = math.sqrt(phi @ phi)
    P = cross(phi)
    if a < SMALL_ANGLE:
        a2 = a * a
        return np.eye(3) + (0.5 - a2 / 24.0) * P + (1.0 / 6.0 - a2 / 120.0) * (P @ P)
    a2 = a * a
    return (np.eye(3) + ((1.0 - math.cos(a)) / a2) * P
            + ((a - math.sin(a)) / (a2 * a)) * (P @ P))


def inv_left_jacobian_so3(phi):
    phi = np.asarray(phi, dtype=float)
    a = math.sqrt(phi @ phi)
    P = cross(phi)
    if a < SMALL_ANGLE:
        return np.eye(3) - 0.5 * P + (1.0 / 12.0 + a * a / 720.0) * (P @ P)
    half = 0.5 * a
    coef = (1.0 - half / math.tan(half)) / (a * a)
    return np.eye(3) - 0.5 * P + coef * (P @ P)


@dataclass(frozen=True)
class ExtendedPose:
    """Element of SE_2(3): attitude ``C``, velocity ``v`` and position ``r``."""

    C: np.ndarray
    v: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "C", np.array(self.C, dtype=float).reshape(3, 3))
        object.__setattr__(self, "v", np.array(self.v, dtype=float).reshape(3))
        object.__setattr__(self, "r", np.array(self.r, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "ExtendedPose":
        return cls(np.eye(3), np.zeros(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, X) -> "ExtendedPose":
        X = np.asarray(X, dtype=float)
        return cls(X[:3, :3], X[:3, 3], X[:3, 4])

    def as_matrix(self) -> np.ndarray:
        X = np.eye(5)
        X[:3, :3] = self.C
        X[:3, 3] = self.v
        X[:3, 4] = self.r
        return X

    def __matmul__(self, other: "ExtendedPose") -> "ExtendedPose":
        return compose(self, other)


def compose(X1: ExtendedPose, X2: ExtendedPose) -> ExtendedPose:
    return ExtendedPose(X1.C @ X2.C, X1.C @ X2.v + X1.v, X1.C @ X2.r + X1.r)


def inverse(X: ExtendedPose) -> ExtendedPose:
    Ct = X.C.T
    return ExtendedPose(Ct, -Ct @ X.v, -Ct @ X.r)


def wedge_se23(xi) -> np.ndarray:
    """5x5 Lie algebra matrix of a 9-dim tangent vector."""
    xi = np.asarray(xi, dtype=float)
    Xi = np.zeros((5, 5))
    Xi[:3, :3] = cross(xi[:3])
    Xi[:3, 3] = xi[3:6]
    Xi[:3, 4] = xi[6:9]
    return Xi


def vee_se23(Xi) -> np.ndarray:
    Xi = np.asarray(Xi, dtype=float)
    return np.concatenate([vee(Xi[:3, :3]), Xi[:3, 3], Xi[:3, 4]])


def exp_se23(xi) -> ExtendedPose:
    xi = np.asarray(xi, dtype=float)
    phi = xi[:3]
    J = left_jacobian_so3(phi)
    return ExtendedPose(exp_so3(phi), J @ xi[3:6], J @ xi[6:9])


def log_se23(X: ExtendedPose) -> np.ndarray:
    phi = log_so3(X.C)
    Jinv = inv_left_jacobian_so3(phi)
    return np.concatenate([phi, Jinv @ X.v, Jinv @ X.r])


def orthonormalize(C) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar projection)."""
    U, _, Vt = np.linalg.svd(C)
    R = U @ Vt
    if np.linalg.det(R) < 0.0:
        U[:, -1] = -U[:, -1]
        R = U @ Vt
    return R
