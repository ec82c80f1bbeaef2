"""
Slack-softened MPC over DG power-factor references.

Decision vector ``z = [U; eps_lo; eps_hi]``.  Cost::

    (Y - Yr)' Qbar (Y - Yr) + U' Rbar U + mu_lo eps_lo^2 + mu_hi eps_hi^2

with ``Y = G U + F``, subject to ``Umin <= U <= Umax``,
``Ymin - eps_lo <= Y <= Ymax + eps_hi`` and ``eps >= 0``.  The QP uses the
``1/2 z'Hz + f'z`` convention, so ``H = 2 * blockdiag(G'QbarG + Rbar, mu)``.
"""

from __future__ import annotations

import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .predictor import History, Prediction, build_prediction, estimate_delta
from .qp import ActiveSetSolver, QpError, QpProblem, QpSolution
from .sysid import ImpulseResponseModel

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]


@dataclass
class MpcConfig:
    """Controller settings; voltages in p.u., power factors absolute.

    ``q_weight`` / ``r_weight`` are scalars (times identity) or per-channel
    diagonals.  ``v_ref`` of ``None`` tracks the model's operating-point
    voltages.
    """

    N: int = 10
    Nu: int = 2
    q_weight: ArrayLike = 10.0
    r_weight: ArrayLike = 0.1
    mu_lo: float = 1000.0
    mu_hi: float = 1000.0
    v_min: ArrayLike = 0.9
    v_max: ArrayLike = 1.1
    pf_min: ArrayLike = 0.6
    pf_max: ArrayLike = 1.0
    v_ref: Optional[ArrayLike] = None

    def validate(self, ny: int, nu: int) -> None:
        if not self.N >= self.Nu >= 1:
            raise ValueError(f"need N >= Nu >= 1, got N={self.N}, Nu={self.Nu}")
        if not (self.mu_lo > 0 and self.mu_hi > 0):
            raise ValueError("slack weights must be positive")
        q = np.broadcast_to(np.asarray(self.q_weight, dtype=float), (ny,))
        r = np.broadcast_to(np.asarray(self.r_weight, dtype=float), (nu,))
        if np.any(q <= 0) or np.any(r <= 0):
            raise ValueError("Q and R must be positive definite")
        vmin = np.broadcast_to(np.asarray(self.v_min, dtype=float), (ny,))
        vmax = np.broadcast_to(np.asarray(self.v_max, dtype=float), (ny,))
        if np.any(vmin >= vmax):
            raise ValueError("v_min must be below v_max")
        pmin = np.broadcast_to(np.asarray(self.pf_min, dtype=float), (nu,))
        pmax = np.broadcast_to(np.asarray(self.pf_max, dtype=float), (nu,))
        if np.any(pmin >= pmax):
            raise ValueError("pf_min must be below pf_max")

    @classmethod
    def from_dict(cls, doc: dict) -> "MpcConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown controller settings: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "MpcConfig":
        doc = tomllib.loads(Path(path).read_text())
        return cls.from_dict(doc.get("controller", doc))


@dataclass
class Bounds:
    """Deviation-coordinate bounds and reference for one model."""

    u_min: np.ndarray
    u_max: np.ndarray
    y_min: np.ndarray
    y_max: np.ndarray
    y_ref: np.ndarray


def deviation_bounds(cfg: MpcConfig, model: ImpulseResponseModel) -> Bounds:
    ny, nu = model.ny, model.nu
    full = lambda v, n: np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()
    v_ref = model.y_op if cfg.v_ref is None else full(cfg.v_ref, ny)
    return Bounds(full(cfg.pf_min, nu) - model.u_op, full(cfg.pf_max, nu) - model.u_op,
                  full(cfg.v_min, ny) - model.y_op, full(cfg.v_max, ny) - model.y_op,
                  v_ref - model.y_op)


def assemble(cfg: MpcConfig, pred: Prediction, bounds: Bounds) -> QpProblem:
    """Build the QP in ``z = [U; eps_lo; eps_hi]``."""
    N, Nu = cfg.N, cfg.Nu
    G, F = pred.G, pred.F
    ny = F.size // N
    nu = G.shape[1] // Nu
    if pred.N != N or pred.Nu != Nu or bounds.y_min.size != ny or bounds.u_min.size != nu:
        raise ValueError("prediction, bounds and configuration dimensions disagree")
    if np.any(bounds.u_min > bounds.u_max):
        raise ValueError("input bounds are inconsistent (u_min > u_max)")

    q = np.tile(np.broadcast_to(np.asarray(cfg.q_weight, dtype=float), (ny,)), N)
    r = np.tile(np.broadcast_to(np.asarray(cfg.r_weight, dtype=float), (nu,)), Nu)
    nU = Nu * nu
    n = nU + 2

    e = F - np.tile(bounds.y_ref, N)
    QG = q[:, None] * G
    H = np.zeros((n, n))
    H[:nU, :nU] = 2.0 * (G.T @ QG + np.diag(r))
    H[nU, nU] = 2.0 * cfg.mu_lo
    H[nU + 1, nU + 1] = 2.0 * cfg.mu_hi
    H = 0.5 * (H + H.T)
    f = np.zeros(n)
    f[:nU] = 2.0 * QG.T @ e
    const = float(e @ (q * e))

    ones = np.ones((N * ny, 1))
    zeros = np.zeros((N * ny, 1))
    y_max = np.tile(bounds.y_max, N)
    y_min = np.tile(bounds.y_min, N)
    A = np.vstack([np.hstack([G, zeros, -ones]),     # G U + F <= Ymax + eps_hi
                   np.hstack([-G, -ones, zeros])])   # G U + F >= Ymin - eps_lo
    b = np.concatenate([y_max - F, F - y_min])
    lb = np.concatenate([np.tile(bounds.u_min, Nu), [0.0, 0.0]])
    ub = np.concatenate([np.tile(bounds.u_max, Nu), [np.inf, np.inf]])

    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise QpError("assembled Hessian is not positive definite; check Q, R and mu") from None

    # feasible start: inputs clipped to their box, slacks covering any violation
    U0 = np.clip(np.zeros(nU), lb[:nU], ub[:nU])
    Y0 = G @ U0 + F
    x0 = np.concatenate([U0, [max(0.0, float((y_min - Y0).max())),
                              max(0.0, float((Y0 - y_max).max()))]])
    return QpProblem(H, f, A, b, lb, ub, constant=const, x0=x0)


def objective(cfg: MpcConfig, pred: Prediction, bounds: Bounds, z) -> float:
    """Explicit cost expression, independent of the assembled (H, f)."""
    N, Nu = cfg.N, cfg.Nu
    z = np.asarray(z, dtype=float)
    nU = z.size - 2
    ny = pred.F.size // N
    nu = nU // Nu
    U, eps_lo, eps_hi = z[:nU], z[nU], z[nU + 1]
    Y = pred(U)
    q = np.tile(np.broadcast_to(np.asarray(cfg.q_weight, dtype=float), (ny,)), N)
    r = np.tile(np.broadcast_to(np.asarray(cfg.r_weight, dtype=float), (nu,)), Nu)
    e = Y - np.tile(bounds.y_ref, N)
    return float(e @ (q * e) + U @ (r * U) + cfg.mu_lo * eps_lo ** 2 + cfg.mu_hi * eps_hi ** 2)


@dataclass
class ControlOutput:
    pf: np.ndarray                 # absolute power factors to apply
    u: np.ndarray                  # applied move, deviation coordinates
    slacks: Tuple[float, float]    # (eps_lo, eps_hi)
    degraded: bool = False
    solution: Optional[QpSolution] = None


class MpcController:
    """Receding-horizon controller around an impulse-response model."""

    def __init__(self, model: ImpulseResponseModel, cfg: Optional[MpcConfig] = None,
                 solver: Optional[ActiveSetSolver] = None):
        self.model = model
        self.cfg = cfg or MpcConfig()
        self.cfg.validate(model.ny, model.nu)
        self.solver = solver or ActiveSetSolver()
        self.history = History.for_model(model)
        self.bounds = deviation_bounds(self.cfg, model)
        self.u_prev = np.zeros(model.nu)
        self.degraded = False
        self.last_prediction: Optional[Prediction] = None

    def plan(self, y_meas, d_meas, d_future=None) -> Tuple[QpProblem, Prediction]:
        """Estimate delta, predict and assemble the QP for the current sample."""
        m = self.model
        y = np.asarray(y_meas, dtype=float) - m.y_op
        d = np.asarray(d_meas, dtype=float) - m.d_op
        delta = estimate_delta(m, self.history, y)
        pred = build_prediction(m, self.history, delta, self.cfg.N, self.cfg.Nu, d, d_future)
        self.last_prediction = pred
        return assemble(self.cfg, pred, self.bounds), pred

    def step(self, y_meas, d_meas, d_future=None) -> ControlOutput:
        """One control sample: returns power factors to apply and the optimal slacks.

        ``y_meas`` and ``d_meas`` are absolute measurements; the history is
        advanced with the applied move and the disturbance deviation.
        """
        m = self.model
        d = np.asarray(d_meas, dtype=float) - m.d_op
        sol = None
        try:
            qp, _ = self.plan(y_meas, d_meas, d_future)
            sol = self.solver.solve(qp)
            nU = self.cfg.Nu * m.nu
            u = sol.z[:m.nu].copy()
            slacks = (float(sol.z[nU]), float(sol.z[nU + 1]))
            self.degraded = False
        except QpError as exc:
            log.warning("MPC solve failed (%s); holding previous input", exc)
            u = self.u_prev.copy()
            slacks = (0.0, 0.0)
            self.degraded = True
        pf = np.clip(m.u_op + u, np.broadcast_to(self.cfg.pf_min, (m.nu,)),
                     np.broadcast_to(self.cfg.pf_max, (m.nu,)))
        u = pf - m.u_op
        self.history.advance(u, d)
        self.u_prev = u
        return ControlOutput(pf, u, slacks, self.degraded, sol)
