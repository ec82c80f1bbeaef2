"""
Dense convex QP solver (primal active set).

Solves::

    minimize    1/2 z'Hz + f'z
    subject to  A z <= b,   lb <= z <= ub

with ``H`` symmetric positive definite.  Equality-constrained subproblems are
solved through the Cholesky factor of ``H`` and a Schur complement on the
working set.  Pivoting is deterministic: the most negative multiplier leaves
the working set, the first blocking constraint enters it, and ties go to the
lowest constraint index.

Constraint rows are numbered: general rows first, then finite upper bounds,
then finite lower bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular


class QpError(RuntimeError):
    pass


class QpSolverFailure(QpError):
    """Iteration limit or numerical breakdown; carries residual diagnostics."""

    def __init__(self, message: str, residuals: Optional[dict] = None):
        super().__init__(message)
        self.residuals = residuals or {}


class QpInfeasible(QpError):
    pass


@dataclass
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    constant: float = 0.0
    x0: Optional[np.ndarray] = None  # optional feasible starting point

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        n = self.H.shape[0]
        self.f = np.asarray(self.f, dtype=float).reshape(n)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(self.A.shape[0])
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if np.any(self.lb > self.ub):
            raise QpInfeasible("inconsistent simple bounds: lb > ub")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.f @ z + self.constant)

    def rows(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """All constraints as C z <= d; also returns variable index and sign of bound rows."""
        n = self.n
        iu = np.flatnonzero(np.isfinite(self.ub))
        il = np.flatnonzero(np.isfinite(self.lb))
        I = np.eye(n)
        C = np.vstack([self.A, I[iu], -I[il]])
        d = np.concatenate([self.b, self.ub[iu], -self.lb[il]])
        var = np.concatenate([np.full(self.A.shape[0], -1), iu, il])
        sign = np.concatenate([np.zeros(self.A.shape[0]), np.ones(iu.size), -np.ones(il.size)])
        return C, d, var.astype(int), sign


@dataclass
class QpSolution:
    z: np.ndarray
    objective: float
    active_set: Tuple[int, ...]
    multipliers: np.ndarray          # one per row of QpProblem.rows()
    lam_general: np.ndarray          # multipliers of A z <= b
    lam_upper: np.ndarray            # per variable, upper bound
    lam_lower: np.ndarray            # per variable, lower bound
    iterations: int
    residuals: dict = field(default_factory=dict)

    @property
    def kkt_max(self) -> float:
        return max(self.residuals.values())


def kkt_residuals(qp: QpProblem, z: np.ndarray, lam: np.ndarray) -> dict:
    """Scaled stationarity, primal/dual feasibility and complementarity residuals."""
    C, d, _, _ = qp.rows()
    Hz = qp.H @ z
    Ctl = C.T @ lam
    grad = Hz + qp.f + Ctl
    scale = max(1.0, np.abs(Hz).max(initial=0), np.abs(qp.f).max(initial=0),
                np.abs(Ctl).max(initial=0))
    slack = d - C @ z
    dscale = max(1.0, np.abs(d).max(initial=0))
    return {
        "stationarity": float(np.abs(grad).max(initial=0) / scale),
        "primal": float(max(0.0, -slack.min(initial=0)) / dscale),
        "dual": float(max(0.0, -lam.min(initial=0))),
        "complementarity": float(np.abs(lam * slack).max(initial=0) / (scale * dscale)),
    }


def _active_set(L: np.ndarray, H: np.ndarray, f: np.ndarray, C: np.ndarray, d: np.ndarray,
                x: np.ndarray, max_iter: int, feas_tol: float) -> Tuple[np.ndarray, List[int], np.ndarray, int]:
    n = H.shape[0]
    W: List[int] = []
    lam_w = np.zeros(0)
    # after a full unblocked step x minimizes over the working set; the next
    # step would be pure round-off
    stationary = False
    for it in range(1, max_iter + 1):
        g = H @ x + f
        Lg = solve_triangular(L, g, lower=True)
        if W:
            CW = C[W]
            Y = solve_triangular(L, CW.T, lower=True)
            S = Y.T @ Y
            try:
                lam_w = cho_solve(cho_factor(S), -(Y.T @ Lg))
            except np.linalg.LinAlgError:
                lam_w = np.linalg.lstsq(S, -(Y.T @ Lg), rcond=None)[0]
            p = -solve_triangular(L.T, Lg + Y @ lam_w, lower=False)
        else:
            lam_w = np.zeros(0)
            p = -solve_triangular(L.T, Lg, lower=False)

        if len(W) == n:
            stationary = True
        if stationary or np.abs(p).max() <= 1e-13 * max(1.0, np.abs(x).max()):
            if not W or lam_w.min() >= -1e-12 * max(1.0, np.abs(g).max()):
                return x, W, lam_w, it
            # most negative multiplier leaves; W is kept sorted so ties pick the lowest row
            drop = int(np.argmin(lam_w))
            W.pop(drop)
            stationary = False
            continue

        Cp = C @ p
        slack = d - C @ x
        mask = Cp > 1e-14 * max(1.0, np.abs(p).max())
        mask[W] = False
        alpha = 1.0
        block = -1
        if mask.any():
            idx = np.flatnonzero(mask)
            ratios = np.maximum(slack[idx], 0.0) / Cp[idx]
            r = ratios.min()
            if r < 1.0:
                alpha = r
                block = int(idx[np.flatnonzero(ratios <= r)[0]])
        x = x + alpha * p
        if block >= 0:
            W.append(block)
            W.sort()
        else:
            stationary = True
    raise QpSolverFailure(f"active-set iteration limit ({max_iter}) reached",
                          {"working_set_size": len(W)})


class ActiveSetSolver:
    """Primal active-set QP solver; see module docstring."""

    def __init__(self, max_iter: Optional[int] = None, feas_tol: float = 1e-9):
        self.max_iter = max_iter
        self.feas_tol = feas_tol

    def solve(self, qp: QpProblem) -> QpSolution:
        try:
            L = np.linalg.cholesky(qp.H)
        except np.linalg.LinAlgError:
            raise QpError("Hessian is not positive definite") from None
        C, d, var, sign = qp.rows()
        m = C.shape[0]
        max_iter = self.max_iter or 20 * (qp.n + m) + 100

        x = self._start(qp, C, d, max_iter)
        x, W, lam_w, iters = _active_set(L, qp.H, qp.f, C, d, x, max_iter, self.feas_tol)

        lam = np.zeros(m)
        lam[W] = np.maximum(lam_w, 0.0)
        na = qp.A.shape[0]
        lam_up = np.zeros(qp.n)
        lam_lo = np.zeros(qp.n)
        for r in range(na, m):
            if sign[r] > 0:
                lam_up[var[r]] = lam[r]
            else:
                lam_lo[var[r]] = lam[r]
        res = kkt_residuals(qp, x, lam)
        return QpSolution(x, qp.objective(x), tuple(W), lam, lam[:na], lam_up, lam_lo, iters, res)

    def _start(self, qp: QpProblem, C, d, max_iter) -> np.ndarray:
        if qp.x0 is not None:
            x0 = np.asarray(qp.x0, dtype=float)
            if np.all(C @ x0 <= d + self.feas_tol * max(1.0, np.abs(d).max(initial=0))):
                return x0
        c = np.clip(np.zeros(qp.n), qp.lb, qp.ub)
        viol = qp.A @ c - qp.b
        if viol.size == 0 or viol.max() <= 0:
            return c
        return self._phase_one(qp, c, max_iter)

    def _phase_one(self, qp: QpProblem, c: np.ndarray, max_iter: int) -> np.ndarray:
        # min 1/2|z - c|^2 + 1/2 t^2 + w t  s.t.  A z - t <= b, bounds on z, t >= 0
        n = qp.n
        na = qp.A.shape[0]
        H1 = np.eye(n + 1)
        L1 = H1
        aux = QpProblem(H1, np.zeros(n + 1), np.hstack([qp.A, -np.ones((na, 1))]), qp.b,
                        np.append(qp.lb, 0.0), np.append(qp.ub, np.inf))
        C1, d1, _, _ = aux.rows()
        t0 = float(max(0.0, (qp.A @ c - qp.b).max()))
        for w in (1e2, 1e4, 1e6, 1e8):
            f1 = np.append(-c, w)
            x, _, _, _ = _active_set(L1, H1, f1, C1, d1, np.append(c, t0), max_iter, self.feas_tol)
            if x[-1] <= 1e-12 * max(1.0, t0):
                return x[:n]
        raise QpInfeasible(f"no feasible point found (min violation {x[-1]:.3e})")


def solve_qp(qp: QpProblem, **kwargs) -> QpSolution:
    return ActiveSetSolver(**kwargs).solve(qp)
