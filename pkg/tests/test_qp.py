import time

import numpy as np
import pytest

from voltmpc.qp import (ActiveSetSolver, QpError, QpInfeasible, QpProblem, QpSolverFailure,
                        kkt_residuals, solve_qp)

from oracles import projected_gradient


def random_pd(rng, n, cond=50.0):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return Q @ np.diag(np.geomspace(1.0, cond, n)) @ Q.T


def random_instance(rng, n=None, boxed=False):
    n = int(rng.integers(2, 12)) if n is None else n
    m = int(rng.integers(0, 3 * n))
    H = random_pd(rng, n, 10 ** rng.uniform(0, 3))
    f = rng.normal(size=n) * 5
    A = rng.normal(size=(m, n))
    x_feas = rng.uniform(-0.5, 0.5, n)
    b = A @ x_feas + rng.uniform(0, 1, m)   # x_feas strictly feasible
    p_box = 1.0 if boxed else 0.7
    lb = np.where(rng.random(n) < p_box, -1.0 + rng.uniform(-1, 0, n), -np.inf)
    ub = np.where(rng.random(n) < p_box, 1.0 + rng.uniform(0, 1, n), np.inf)
    return QpProblem(H, f, A, b, lb, ub)


def test_unconstrained_analytic():
    sol = solve_qp(QpProblem(np.eye(2), [-1.0, -2.0], np.zeros((0, 2)), [], None, None))
    assert sol.z.tolist() == [1.0, 2.0]
    assert sol.active_set == ()


def test_clipped_analytic():
    # min z^2 - 4 z  s.t. z <= 1
    sol = solve_qp(QpProblem([[2.0]], [-4.0], [[1.0]], [1.0], None, None))
    assert sol.z[0] == 1.0
    assert sol.lam_general[0] == pytest.approx(2.0)
    sol = solve_qp(QpProblem([[2.0]], [-4.0], np.zeros((0, 1)), [], None, [1.0]))
    assert sol.z[0] == 1.0 and sol.lam_upper[0] == pytest.approx(2.0)


def test_kkt_on_random_instances(rng):
    t0 = time.perf_counter()
    worst = 0.0
    solver = ActiveSetSolver()
    for _ in range(1000):
        qp = random_instance(rng)
        sol = solver.solve(qp)
        worst = max(worst, sol.kkt_max)
    assert worst <= 1e-8
    assert time.perf_counter() - t0 < 30.0


def test_projected_gradient_oracle(rng):
    for _ in range(50):
        n = 5
        H = random_pd(rng, n, 20.0)
        f = rng.normal(size=n) * 3
        lb, ub = -rng.uniform(0.1, 1, n), rng.uniform(0.1, 1, n)
        sol = solve_qp(QpProblem(H, f, np.zeros((0, n)), [], lb, ub))
        ref = projected_gradient(H, f, lb, ub)
        assert np.max(np.abs(sol.z - ref)) < 1e-8


def test_two_variable_grid_search(rng):
    for _ in range(20):
        qp = random_instance(rng, n=2, boxed=True)
        sol = solve_qp(qp)
        lo, hi = qp.lb, qp.ub
        best, arg = np.inf, None
        # coarse grid then two refinements around the best feasible point
        for span in (None, 0.05, 0.002):
            if span is None:
                g0 = np.linspace(lo[0], hi[0], 401)
                g1 = np.linspace(lo[1], hi[1], 401)
            else:
                g0 = np.clip(np.linspace(arg[0] - span, arg[0] + span, 401), lo[0], hi[0])
                g1 = np.clip(np.linspace(arg[1] - span, arg[1] + span, 401), lo[1], hi[1])
            X0, X1 = np.meshgrid(g0, g1)
            Z = np.stack([X0.ravel(), X1.ravel()], 1)
            ok = np.all(Z @ qp.A.T <= qp.b + 1e-12, axis=1)
            vals = 0.5 * np.einsum("ij,jk,ik->i", Z, qp.H, Z) + Z @ qp.f
            vals[~ok] = np.inf
            k = int(np.argmin(vals))
            if vals[k] < best:
                best, arg = vals[k], Z[k]
        # the grid never beats the solver and gets within grid resolution of it
        assert qp.objective(sol.z) <= best + 1e-12
        assert best - qp.objective(sol.z) < 1e-4
        assert np.all(qp.A @ sol.z <= qp.b + 1e-12)


def test_row_permutation_invariance(rng):
    for _ in range(50):
        qp = random_instance(rng)
        perm = rng.permutation(qp.A.shape[0])
        a = solve_qp(qp).z
        b = solve_qp(QpProblem(qp.H, qp.f, qp.A[perm], qp.b[perm], qp.lb, qp.ub)).z
        assert np.max(np.abs(a - b)) < 1e-10


def test_deterministic(rng):
    qp = random_instance(rng)
    a, b = solve_qp(qp), solve_qp(qp)
    assert np.array_equal(a.z, b.z) and a.active_set == b.active_set


def test_infeasible_start_uses_phase_one():
    # z >= 2 written as a general row, origin infeasible
    qp = QpProblem(np.eye(1), [0.0], [[-1.0]], [-2.0], None, None)
    sol = solve_qp(qp)
    assert sol.z[0] == pytest.approx(2.0, abs=1e-12)


def test_errors():
    with pytest.raises(QpInfeasible):
        QpProblem(np.eye(1), [0.0], np.zeros((0, 1)), [], [1.0], [0.0])
    with pytest.raises(QpInfeasible):
        solve_qp(QpProblem(np.eye(1), [0.0], [[1.0], [-1.0]], [-1.0, -1.0], None, None))
    with pytest.raises(QpError):
        solve_qp(QpProblem(-np.eye(2), [0.0, 0.0], np.zeros((0, 2)), [], None, None))
    with pytest.raises(QpSolverFailure) as info:
        ActiveSetSolver(max_iter=1).solve(QpProblem(np.eye(3), [-5.0, -5.0, -5.0],
                                                    np.zeros((0, 3)), [], None, np.ones(3)))
    assert "working_set_size" in info.value.residuals


def test_residual_helper_flags_bad_points():
    qp = QpProblem(np.eye(2), [-1.0, -2.0], [[1.0, 0.0]], [0.5], None, None)
    sol = solve_qp(qp)
    good = kkt_residuals(qp, sol.z, sol.multipliers)
    bad = kkt_residuals(qp, np.array([1.0, 2.0]), np.zeros(1))
    assert max(good.values()) < 1e-12
    assert bad["primal"] > 0.1
