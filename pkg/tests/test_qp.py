import numpy as np
import pytest

from oracles import qp_enumerate
from tandem_mpc.qp import QpProblem, Status, dump_problem, kkt_check, load_problem, relative_kkt, solve


def random_qp(rng, n=None, m=None, psd=False):
    n = n or int(rng.integers(1, 7))
    m = int(rng.integers(0, 5)) if m is None else m
    L = rng.standard_normal((n, n))
    H = L @ L.T + (0.0 if psd else 0.1) * np.eye(n)
    F = rng.standard_normal(n)
    G = rng.standard_normal((m, n))
    x0 = rng.standard_normal(n)
    W = G @ x0 + rng.random(m)
    return QpProblem(H, F, G, W)


def matches_oracle(p, tol=1e-6):
    sol = solve(p)
    _, x_ref, _ = qp_enumerate(p.H, p.F, p.G, p.W)
    return sol.ok and np.allclose(sol.x, x_ref, atol=tol, rtol=0)


def test_matches_enumeration_oracle(rng):
    assert all(matches_oracle(random_qp(rng)) for _ in range(100))


def test_kkt_residuals_at_solution(rng):
    for _ in range(20):
        p = random_qp(rng, n=6, m=4)
        sol = solve(p)
        assert max(sol.kkt_residuals) <= 1e-8
        assert np.all(sol.duals >= 0.0)
        assert sol.kkt_residuals == relative_kkt(p, sol.x, sol.duals)


def test_kkt_check_examples():
    p = QpProblem(np.eye(1), np.zeros(1), np.zeros((0, 1)), np.zeros(0))
    assert kkt_check(p, np.zeros(1)) == (0.0, 0.0, 0.0)
    rng = np.random.default_rng(3)
    q = random_qp(rng, n=4, m=3)
    sol = solve(q)
    assert kkt_check(q, sol.x + 1e-3, sol.duals)[0] > 1e-8


def test_unconstrained(rng):
    p = random_qp(rng, n=5, m=0)
    sol = solve(p)
    assert sol.status is Status.OPTIMAL
    assert np.allclose(sol.x, np.linalg.solve(p.H, -p.F), atol=1e-10)


def test_deterministic(rng):
    p = random_qp(rng, n=6, m=4)
    a, b = solve(p), solve(p)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.duals, b.duals)


def test_scale_invariance(rng):
    p = random_qp(rng, n=6, m=4)
    base = solve(p).x
    for c in (1e-3, 7.0, 1e4):
        q = QpProblem(c * p.H, c * p.F, p.G, p.W)
        assert np.allclose(solve(q).x, base, atol=1e-8)


def test_beats_random_feasible_points(rng):
    p = random_qp(rng, n=3, m=4)
    sol = solve(p)
    best = p.objective(sol.x)
    count = 0
    while count < 1000:
        y = sol.x + 3.0 * rng.standard_normal(p.n)
        if np.all(p.G @ y <= p.W):
            count += 1
            assert p.objective(y) >= best - 1e-9


def test_duality_measure_decreases(rng):
    p = random_qp(rng, n=6, m=4)
    sol = solve(p)
    mu = sol.mu_history
    assert len(mu) >= 2
    for a, b in zip(mu[1:], mu[2:]):
        assert b <= 10.0 * a


def test_psd_hessian(rng):
    p = random_qp(rng, n=4, m=4, psd=True)
    p = QpProblem(p.H, p.F, np.vstack([np.eye(4), -np.eye(4)]), np.ones(8))
    sol = solve(p)
    assert sol.ok
    assert np.all(np.abs(sol.x) <= 1.0 + 1e-8)


def test_inactive_slack_is_exactly_zero():
    # min (x-1)^2/2 + 1e4 eps^2/2 + 1e-8 z^2/2  s.t.  |x| <= z, z <= 2 + eps, eps >= 0
    H = np.diag([1.0, 1e-8, 1e4])
    F = np.array([-1.0, 0.0, 0.0])
    G = np.array([[1.0, -1.0, 0.0], [-1.0, -1.0, 0.0], [0.0, 1.0, -1.0], [0.0, 0.0, -1.0]])
    W = np.array([0.0, 0.0, 2.0, 0.0])
    sol = solve(QpProblem(H, F, G, W))
    assert sol.ok
    assert sol.x[2] == 0.0
    assert np.allclose(sol.x[:2], [1.0, 1.0], atol=1e-10)


def test_infeasible_is_reported():
    G = np.array([[1.0], [-1.0]])
    W = np.array([-1.0, -1.0])  # x <= -1 and x >= 1
    sol = solve(QpProblem(np.eye(1), np.zeros(1), G, W))
    assert sol.status is not Status.OPTIMAL


def test_dimension_check():
    with pytest.raises(ValueError):
        QpProblem(np.eye(2), np.zeros(3), np.zeros((1, 2)), np.zeros(1))


def test_dump_round_trip(tmp_path, rng):
    p = random_qp(rng, n=5, m=3)
    path = tmp_path / "qp.txt"
    dump_problem(p, path)
    q = load_problem(path)
    for a, b in ((p.H, q.H), (p.F, q.F), (p.G, q.G), (p.W, q.W)):
        assert np.array_equal(a, b)
    empty = QpProblem(np.eye(2), np.zeros(2), np.zeros((0, 2)), np.zeros(0))
    dump_problem(empty, path)
    assert load_problem(path).m == 0
