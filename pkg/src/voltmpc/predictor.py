"""
Impulse-response output predictor.

All quantities are deviations from the model's operating point.  The
prediction over ``N`` steps is affine in the ``Nu`` future moves::

    Y = G @ U + F

where the last move is held for the rest of the horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sysid import ImpulseResponseModel


class History:
    """Last ``M`` applied inputs and measured disturbances, newest first.

    ``u[0]`` is u(k-1), ``u[M-1]`` is u(k-M).
    """

    def __init__(self, M: int, nu: int, nd: int):
        self.u = np.zeros((M, nu))
        self.d = np.zeros((M, nd))

    @classmethod
    def for_model(cls, model: ImpulseResponseModel) -> "History":
        return cls(model.M, model.nu, model.nd)

    @property
    def M(self) -> int:
        return self.u.shape[0]

    def advance(self, u_applied, d_measured) -> "History":
        u_applied = np.asarray(u_applied, dtype=float)
        d_measured = np.asarray(d_measured, dtype=float)
        if u_applied.shape != self.u.shape[1:] or d_measured.shape != self.d.shape[1:]:
            raise ValueError("history update has the wrong dimensions")
        self.u[1:] = self.u[:-1]
        self.u[0] = u_applied
        self.d[1:] = self.d[:-1]
        self.d[0] = d_measured
        return self

    def copy(self) -> "History":
        h = History(self.M, self.u.shape[1], self.d.shape[1])
        h.u[:] = self.u
        h.d[:] = self.d
        return h


def _check(model: ImpulseResponseModel, history: History) -> None:
    if history.u.shape != (model.M, model.nu) or history.d.shape != (model.M, model.nd):
        raise ValueError(f"history shapes {history.u.shape}/{history.d.shape} do not match "
                         f"model (M={model.M}, nu={model.nu}, nd={model.nd})")


def estimate_delta(model: ImpulseResponseModel, history: History, y_meas) -> np.ndarray:
    """Unmodelled output term: measurement minus the convolution of the history."""
    _check(model, history)
    y_meas = np.asarray(y_meas, dtype=float)
    if y_meas.shape != (model.ny,):
        raise ValueError(f"expected {model.ny} outputs, got shape {y_meas.shape}")
    return y_meas - np.einsum("iab,ib->a", model.g, history.u) \
        - np.einsum("iab,ib->a", model.gamma, history.d)


@dataclass(frozen=True)
class Prediction:
    F: np.ndarray       # (N*ny,) free response
    G: np.ndarray       # (N*ny, Nu*nu) dynamic matrix
    delta: np.ndarray   # (ny,)
    N: int
    Nu: int

    def __call__(self, U) -> np.ndarray:
        return self.G @ np.asarray(U, dtype=float) + self.F


def dynamic_matrix(model: ImpulseResponseModel, N: int, Nu: int) -> np.ndarray:
    """Block lower-triangular move-to-output map with the last move held."""
    if not N >= Nu >= 1:
        raise ValueError(f"need N >= Nu >= 1, got N={N}, Nu={Nu}")
    M, ny, nu = model.g.shape
    gpad = np.zeros((N, ny, nu))
    n = min(N, M)
    gpad[:n] = model.g[:n]
    cum = np.cumsum(gpad, axis=0)
    G = np.zeros((N * ny, Nu * nu))
    for i in range(1, N + 1):
        rows = slice((i - 1) * ny, i * ny)
        for j in range(1, min(i, Nu) + 1):
            cols = slice((j - 1) * nu, j * nu)
            if j < Nu:
                G[rows, cols] = gpad[i - j]
            else:
                # held move u(k+Nu-1) acts from step Nu to i
                G[rows, cols] = cum[i - Nu]
    return G


def free_response(model: ImpulseResponseModel, history: History, delta, N: int,
                  d_current=None, d_future=None) -> np.ndarray:
    """Prediction with all future moves zero.

    ``d_current`` is d(k); ``d_future`` holds predicted variations of d
    relative to d(k) for k+1..k+N-1 (zero rows mean the measurement is held).
    """
    _check(model, history)
    M, ny, nu = model.g.shape
    nd = model.nd
    d_now = np.zeros(nd) if d_current is None else np.asarray(d_current, dtype=float)
    d_ahead = np.tile(d_now, (N, 1))
    if d_future is not None:
        d_future = np.asarray(d_future, dtype=float).reshape(-1, nd)
        if d_future.shape[0] > N - 1:
            raise ValueError(f"d_future covers at most N-1={N - 1} steps")
        d_ahead[1:1 + d_future.shape[0]] += d_future
    delta = np.asarray(delta, dtype=float)

    F = np.empty((N, ny))
    for i in range(1, N + 1):
        acc = delta.copy()
        # past inputs: g_j u(k+i-j) for j > i, i.e. history slots 0..M-i-1
        if i < M:
            acc += np.einsum("jab,jb->a", model.g[i:], history.u[:M - i])
            acc += np.einsum("jab,jb->a", model.gamma[i:], history.d[:M - i])
        # disturbances from k to k+i-1: gamma_j d(k+i-j), j = 1..min(i, M)
        for j in range(1, min(i, M) + 1):
            acc += model.gamma[j - 1] @ d_ahead[i - j]
        F[i - 1] = acc
    return F.reshape(-1)


def build_prediction(model: ImpulseResponseModel, history: History, delta, N: int, Nu: int,
                     d_current=None, d_future=None) -> Prediction:
    return Prediction(free_response(model, history, delta, N, d_current, d_future),
                      dynamic_matrix(model, N, Nu), np.asarray(delta, dtype=float), N, Nu)


def predict(model: ImpulseResponseModel, history: History, delta, U, N: int, Nu: int,
            d_current=None, d_future=None) -> np.ndarray:
    """Stacked outputs y(k+1..k+N) for stacked moves U (length Nu*nu)."""
    U = np.asarray(U, dtype=float)
    if U.shape != (Nu * model.nu,):
        raise ValueError(f"U must have length Nu*nu = {Nu * model.nu}")
    return build_prediction(model, history, delta, N, Nu, d_current, d_future)(U)
