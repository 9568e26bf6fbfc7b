"""Dense primal-dual interior-point solver for convex QPs.

Solves ``min 0.5 x'Hx + F'x  s.t.  Gx <= W`` with Mehrotra's
predictor-corrector method. The Newton system is reduced to the normal
equations ``(H + G' diag(lam/s) G) dx = rhs`` and factored once per
iteration with a Cholesky decomposition.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.linalg.blas import dsyrk

from .errors import NumericalBreakdown

STATIC_REG = 1e-9


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"


@dataclass
class QpProblem:
    H: np.ndarray
    F: np.ndarray
    G: np.ndarray
    W: np.ndarray
    layout: Optional[Any] = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.F = np.asarray(self.F, dtype=float).reshape(-1)
        n = self.H.shape[0]
        self.G = np.asarray(self.G, dtype=float).reshape(-1, n)
        self.W = np.asarray(self.W, dtype=float).reshape(-1)
        if self.H.shape != (n, n) or self.F.shape != (n,) or self.W.shape[0] != self.G.shape[0]:
            raise ValueError("inconsistent QP dimensions")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.G.shape[0]

    def objective(self, x) -> float:
        return float(0.5 * x @ self.H @ x + self.F @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    duals: np.ndarray
    status: Status
    kkt_residuals: tuple
    iterations: int
    mu_history: List[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def kkt_check(p: QpProblem, x, lam=None):
    """``(stationarity, primal, complementarity)`` infinity-norm residuals."""
    x = np.asarray(x, dtype=float)
    if lam is None:
        lam = np.zeros(p.m)
    grad = p.H @ x + p.F
    if p.m == 0:
        return (float(np.max(np.abs(grad), initial=0.0)), 0.0, 0.0)
    g = p.G @ x - p.W
    stat = np.max(np.abs(grad + p.G.T @ lam), initial=0.0)
    prim = np.max(np.maximum(g, 0.0), initial=0.0)
    comp = np.max(np.abs(lam * g), initial=0.0)
    return (float(stat), float(prim), float(comp))


def relative_kkt(p: QpProblem, x, lam=None):
    """KKT residuals normalized by the magnitude of the terms they balance.

    Each absolute residual from :func:`kkt_check` is divided by
    ``max(1, largest contributing term)``, so the values are comparable
    across problems whose data span many orders of magnitude.
    """
    x = np.asarray(x, dtype=float)
    lam = np.zeros(p.m) if lam is None else np.asarray(lam, dtype=float)
    stat, prim, comp = kkt_check(p, x, lam)
    inf = np.inf

    def nrm(v):
        return float(np.linalg.norm(v, inf)) if v.size else 0.0

    Gx = p.G @ x
    s_stat = max(1.0, nrm(p.H @ x), nrm(p.F), nrm(p.G.T @ lam))
    s_prim = max(1.0, nrm(Gx), nrm(p.W))
    s_comp = max(1.0, nrm(lam) * s_prim)
    return (stat / s_stat, prim / s_prim, comp / s_comp)


def _max_step(v, dv):
    neg = dv < 0.0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _factor(K):
    try:
        return cho_factor(K, lower=True, check_finite=False)
    except LinAlgError:
        # fall back to a heavier shift if the reduced matrix lost definiteness
        shift = 1e-8 * max(1.0, np.max(np.abs(np.diag(K))))
        return cho_factor(K + shift * np.eye(K.shape[0]), lower=True, check_finite=False)


def _equilibrate(p: QpProblem, passes: int = 15):
    """Ruiz scaling of the KKT matrix plus a cost scale.

    Returns ``(Dc, Dr, c)`` such that the problem in ``y = x / Dc`` with rows
    multiplied by ``Dr`` and cost multiplied by ``c`` has unit-order data.
    """
    n, m = p.n, p.m
    Dc = np.ones(n)
    Dr = np.ones(m)
    H, G = p.H.copy(), p.G.copy()
    for _ in range(passes):
        col = np.maximum(np.max(np.abs(H), axis=0), np.max(np.abs(G), axis=0, initial=0.0))
        col = np.where(col > 1e-12, 1.0 / np.sqrt(col), 1.0)
        row = np.max(np.abs(G * col), axis=1, initial=0.0)
        row = np.where(row > 1e-12, 1.0 / np.sqrt(row), 1.0)
        H = col[:, None] * H * col
        G = row[:, None] * G * col
        Dc *= col
        Dr *= row
    scale = max(np.mean(np.max(np.abs(H), axis=0)), np.max(np.abs(Dc * p.F), initial=0.0))
    c = 1.0 / min(max(scale, 1e-6), 1e6)
    return Dc, Dr, c


def _polish(p: QpProblem, x, lam, active, res, rounds: int = 6):
    """Re-solve the equality KKT system on a corrected active set.

    Starting from the rows the interior-point iterate flags as active, each
    round drops rows whose multiplier is clearly negative (tiny negative ones
    from degenerate rows are clipped) and adds rows the equality solution
    violates. The result is kept only if it does not worsen the residuals; it
    removes the O(sqrt(mu)) error interior-point iterates carry, which matters
    for variables whose optimum sits exactly on a bound.
    """
    n = p.n
    lam_tol = 1e-9 * max(1.0, float(np.max(np.abs(lam), initial=0.0)))
    prim_tol = 1e-12 * max(1.0, float(np.max(np.abs(p.W), initial=0.0)))
    active = np.asarray(active, dtype=int)
    try:
        Hf = cho_factor(p.H, lower=True, check_finite=False)
    except LinAlgError:
        return x, lam, res
    x_free = cho_solve(Hf, -p.F, check_finite=False)
    for _ in range(rounds):
        if active.size > n:
            return x, lam, res
        # Schur complement of the equality KKT system on the active rows
        Ga = p.G[active]
        Y = cho_solve(Hf, Ga.T, check_finite=False)
        try:
            mult = np.linalg.solve(Ga @ Y, Ga @ x_free - p.W[active])
        except np.linalg.LinAlgError:
            return x, lam, res
        xs = x_free - Y @ mult
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(mult))):
            return x, lam, res
        keep = mult >= -lam_tol
        viol = np.setdiff1d(np.flatnonzero(p.G @ xs - p.W > prim_tol), active)
        if np.all(keep) and viol.size == 0:
            break
        active = np.union1d(active[keep], viol)
    else:
        return x, lam, res
    lam_p = np.zeros(p.m)
    lam_p[active] = np.maximum(mult, 0.0)
    res_p = relative_kkt(p, xs, lam_p)
    if max(res_p) <= max(res):
        return xs, lam_p, res_p
    return x, lam, res


def solve(p: QpProblem, tol: float = 1e-8, max_iter: int = 50) -> QpSolution:
    """Minimize the QP; ``tol`` bounds the :func:`relative_kkt` residuals.

    The interior-point iteration first runs on the problem as given. If it
    breaks down or stalls, it is repeated on a Ruiz-equilibrated copy. The
    returned vectors and residuals always refer to the original problem.
    """
    n, m = p.n, p.m

    if m == 0:
        Hreg = p.H + STATIC_REG * np.eye(n)
        x = cho_solve(_factor(Hreg), -p.F, check_finite=False)
        x = x - cho_solve(_factor(Hreg), p.H @ x + p.F, check_finite=False)
        res = relative_kkt(p, x)
        st = Status.OPTIMAL if max(res) <= tol else Status.MAX_ITER
        return QpSolution(x, np.zeros(0), st, res, 0)

    try:
        sol = _ipm(p, np.ones(n), np.ones(m), 1.0, tol, max_iter)
        if sol.status is not Status.MAX_ITER:
            return sol
    except NumericalBreakdown:
        sol = None
    retry = _ipm(p, *_equilibrate(p), tol, max_iter)
    if sol is None or retry.ok or max(retry.kkt_residuals) < max(sol.kkt_residuals):
        retry.iterations += 0 if sol is None else sol.iterations
        return retry
    return sol


def _ipm(p: QpProblem, Dc, Dr, c, tol, max_iter) -> QpSolution:
    n, m = p.n, p.m
    H = c * (Dc[:, None] * p.H * Dc)
    F = c * Dc * p.F
    G = np.ascontiguousarray(Dr[:, None] * p.G * Dc)
    W = Dr * p.W
    Hreg = H + STATIC_REG * np.eye(n)

    def unscale(y, lam_s):
        return Dc * y, Dr * lam_s / c

    # starting point: unconstrained-ish minimizer, then push slacks inside
    x = cho_solve(_factor(Hreg + G.T @ G), -F + G.T @ W, check_finite=False)
    s = W - G @ x
    lam = np.ones(m)
    shift = max(0.0, -1.5 * float(np.min(s)))
    s = s + shift + 1.0
    mu_hist: List[float] = []
    best = None

    inv_c = 1.0 / c
    Fo = np.linalg.norm(F / Dc, np.inf) * inv_c
    Wo = np.linalg.norm(p.W, np.inf)

    for it in range(1, max_iter + 1):
        Hx = H @ x
        Gtl = G.T @ lam
        Gx = G @ x
        r_d = Hx + F + Gtl
        r_p = Gx + s - W
        mu = float(s @ lam) / m
        mu_hist.append(mu)
        if not (np.all(np.isfinite(x)) and np.isfinite(mu)):
            raise NumericalBreakdown("non-finite interior-point iterate")

        # relative_kkt of the unscaled iterate, from the scaled products
        g = Gx - W
        stat = np.linalg.norm(r_d / Dc, np.inf) * inv_c
        s_stat = max(1.0, np.linalg.norm(Hx / Dc, np.inf) * inv_c, Fo,
                     np.linalg.norm(Gtl / Dc, np.inf) * inv_c)
        s_prim = max(1.0, np.linalg.norm(Gx / Dr, np.inf), Wo)
        prim = np.max(np.maximum(g / Dr, 0.0))
        comp = np.linalg.norm(lam * g, np.inf) * inv_c
        s_comp = max(1.0, np.linalg.norm(lam * Dr, np.inf) * inv_c * s_prim)
        res = (float(stat / s_stat), float(prim / s_prim), float(comp / s_comp))
        if best is None or max(res) < max(best[2]):
            best = (x.copy(), lam.copy(), res, s.copy())
        if max(res) <= tol:
            break

        nl = np.linalg.norm(lam, np.inf)
        if nl > 1e10 * max(1.0, np.linalg.norm(F, np.inf)):
            lh = lam / nl
            if np.linalg.norm(G.T @ lh, np.inf) < 1e-7 and W @ lh < -1e-7:
                xo, lo = unscale(x, lam)
                return QpSolution(xo, lo, Status.INFEASIBLE, res, it - 1, mu_hist)

        d = lam / s
        if not np.all(np.isfinite(d)):
            raise NumericalBreakdown("interior-point scaling overflowed")
        # lower triangle of G^T diag(d) G; the Cholesky factor reads only that half
        Gd = G * np.sqrt(d)[:, None]
        Lf = _factor(Hreg + dsyrk(1.0, Gd, trans=1, lower=1))

        def L(rhs):
            return cho_solve(Lf, rhs, check_finite=False)

        def newton(r_c):
            # r_c is the complementarity residual s*lam - target
            rhs = -r_d + G.T @ ((r_c - lam * r_p) / s)
            dx = L(rhs)
            # one step of iterative refinement against the unregularized operator
            dx = dx + L(rhs - (H @ dx + G.T @ (d * (G @ dx))))
            ds = -r_p - G @ dx
            dlam = -(r_c + lam * ds) / s
            return dx, ds, dlam

        # predictor
        dx_a, ds_a, dl_a = newton(s * lam)
        a_aff = min(_max_step(s, ds_a), _max_step(lam, dl_a))
        mu_aff = float((s + a_aff * ds_a) @ (lam + a_aff * dl_a)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0.0 else 0.0

        # corrector
        dx, ds, dl = newton(s * lam + ds_a * dl_a - sigma * mu)
        alpha = min(_max_step(s, ds), _max_step(lam, dl))
        eta = max(0.95, 1.0 - mu)
        alpha = min(1.0, eta * alpha)

        x = x + alpha * dx
        s = np.maximum(s + alpha * ds, 1e-300)
        lam = np.maximum(lam + alpha * dl, 1e-300)
    else:
        it = max_iter + 1

    x_b, lam_b, res, s_b = best
    xo, lo = unscale(x_b, lam_b)
    res = relative_kkt(p, xo, lo)
    # active set read off the scaled iterate, where s and lam are comparable
    xo, lo, res = _polish(p, xo, lo, np.flatnonzero(lam_b > s_b), res)
    status = Status.OPTIMAL if max(res) <= tol else Status.MAX_ITER
    return QpSolution(xo, lo, status, res, it - 1, mu_hist)


# ----------------------------------------------------------------------------
# problem dump


def _fmt(values) -> str:
    return " ".join(f"{v:.17g}" for v in np.ravel(values))


def dump_problem(p: QpProblem, path) -> None:
    """Write ``p`` as text: a ``n m`` line, then H, F, G, W row by row."""
    lines = [f"{p.n} {p.m}"]
    lines += [_fmt(row) for row in p.H]
    lines.append(_fmt(p.F))
    lines += [_fmt(row) for row in p.G]
    lines.append(_fmt(p.W))
    Path(path).write_text("\n".join(lines) + "\n")


def load_problem(path) -> QpProblem:
    rows = Path(path).read_text().splitlines()
    n, m = (int(t) for t in rows[0].split())

    def vec(line):
        return np.array([float(t) for t in line.split()])

    H = np.array([vec(r) for r in rows[1:1 + n]]).reshape(n, n)
    F = vec(rows[1 + n]) if n else np.zeros(0)
    G = np.array([vec(r) for r in rows[2 + n:2 + n + m]]).reshape(m, n)
    W = vec(rows[2 + n + m]) if m else np.zeros(0)
    return QpProblem(H, F, G, W)
