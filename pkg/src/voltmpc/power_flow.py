"""Backward/forward sweep load flow for radial per-unit networks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid_model import InjectionSet, PerUnitNetwork


class PowerFlowDiverged(RuntimeError):
    """The sweep did not converge; usually an infeasible loading."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class VoltageSolution:
    v: np.ndarray            # complex bus voltages, p.u.
    branch_current: np.ndarray  # current into each bus from its parent, p.u.
    iterations: int
    residual: float

    @property
    def vm(self) -> np.ndarray:
        return np.abs(self.v)


def solve(net: PerUnitNetwork, inj: InjectionSet, v_slack: complex = 1.0,
          tol: float = 1e-8, max_iter: int = 100) -> VoltageSolution:
    """Solve the load flow with constant-PQ injections.

    Flat start at ``v_slack`` on every call.  Iterates until the largest
    change of any bus voltage between sweeps is below ``tol``.
    """
    v_slack = complex(v_slack)
    if not 0.8 <= abs(v_slack) <= 1.2:
        raise ValueError(f"|v_slack| = {abs(v_slack):.4f} outside [0.8, 1.2]")
    s = np.asarray(inj.s, dtype=complex)
    if s.shape != (net.n_bus,) or not np.all(np.isfinite(s)):
        raise ValueError("injections must be a finite vector with one entry per bus")

    n = net.n_bus
    parent = net.parent
    z = net.z
    ysh = net.y_shunt
    v = np.full(n, v_slack, dtype=complex)
    # buses are breadth-first ordered: reversed order visits children before parents
    rev = range(n - 1, 0, -1)
    fwd = range(1, n)
    residual = np.inf
    for it in range(1, max_iter + 1):
        # current drawn at each bus (load convention)
        j = ysh * v - np.conj(s / v)
        for i in rev:
            j[parent[i]] += j[i]
        v_new = np.empty_like(v)
        v_new[0] = v_slack
        for i in fwd:
            v_new[i] = v_new[parent[i]] - z[i] * j[i]
        residual = float(np.max(np.abs(v_new - v)))
        v = v_new
        if not np.all(np.isfinite(v)):
            break
        if residual < tol:
            return VoltageSolution(v, _branch_currents(net, s, v), it, residual)
    raise PowerFlowDiverged(
        f"load flow did not converge in {max_iter} iterations (last change {residual:.3e})",
        residual, max_iter)


def _branch_currents(net: PerUnitNetwork, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    j = net.y_shunt * v - np.conj(s / v)
    for i in range(net.n_bus - 1, 0, -1):
        j[net.parent[i]] += j[i]
    j[0] = 0.0
    return j


def slack_power(net: PerUnitNetwork, inj: InjectionSet, sol: VoltageSolution) -> complex:
    """Complex power delivered by the slack into the network."""
    children = net.parent == 0
    i_root = sol.branch_current[children].sum() + net.y_shunt[0] * sol.v[0] \
        - np.conj(inj.s[0] / sol.v[0])
    return complex(sol.v[0] * np.conj(i_root))


def losses(sol: VoltageSolution, net: PerUnitNetwork) -> float:
    """Active losses: series I^2 R plus shunt conductance losses, p.u."""
    series = float(np.sum(np.abs(sol.branch_current[1:]) ** 2 * net.z.real[1:]))
    shunt = float(np.sum(net.y_shunt.real * np.abs(sol.v) ** 2))
    return series + shunt
