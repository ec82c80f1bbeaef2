"""
Quasi-static plant simulator.

Each sample of length ``T`` the simulator converts power-factor references
into reactive-power references, advances the first-order AVR lags, applies
scheduled events and the tap command, and solves the load flow.  The
resulting bus voltages are the plant's measured outputs.

Reactive power is reported in injection convention.  With
``reactive_sign=+1`` (default) a power factor below one makes the DG absorb
reactive power.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .grid_model import InjectionSet, NetworkModel, PerUnitNetwork, to_per_unit
from .power_flow import PowerFlowDiverged, VoltageSolution, solve

CONTROLLED_NODES = ("N03", "N06", "N11", "N14", "N18",
                    "N19", "N21", "N23", "N27", "N28", "N32")
MEASURED_DGS = ("DG1", "DG2", "DG3")

PF_MIN = 0.6
PF_MAX = 1.0
_PF_TOL = 1e-9


class PlantDivergence(RuntimeError):
    """Load flow failed inside a plant step; ``state`` holds a debugging dump."""

    def __init__(self, message: str, state: dict):
        super().__init__(message)
        self.state = state


class SettlingError(RuntimeError):
    pass


def q_reference(p: np.ndarray, pf: np.ndarray, sign: int = 1) -> np.ndarray:
    """Reactive-power reference (injection) for active power ``p`` at power factor ``pf``."""
    pf = np.clip(pf, PF_MIN, PF_MAX)
    return -sign * p * np.tan(np.arccos(pf))


# --------------------------------------------------------------------------
# Events
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Event:
    """A scheduled change of one load or DG.

    kind ``scale``: demand = nominal * (1 + value) (loads) or
    p = nominal * (1 + value) (DGs); ``set``: absolute MW (DG active power or
    load active power with the load's nominal power factor kept);
    ``disconnect``: zero P and Q.
    """

    time: float
    target: str
    kind: str
    value: float = 0.0

    def __post_init__(self):
        if self.time < 0:
            raise ValueError(f"event time must be nonnegative, got {self.time}")
        if self.kind not in ("scale", "set", "disconnect"):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.kind == "scale" and not self.value > -1:
            raise ValueError(f"scale factor must exceed -1, got {self.value}")


class EventSchedule:
    """Sorted event list with exactly-once application."""

    def __init__(self, events: Sequence[Event] = ()):
        times = [e.time for e in events]
        if times != sorted(times):
            raise ValueError("events must be sorted by time")
        self.events: Tuple[Event, ...] = tuple(events)
        self.next_index = 0

    @property
    def pending(self) -> int:
        return len(self.events) - self.next_index

    def due(self, t: float) -> List[Event]:
        out = []
        # small tolerance: event times are multiples of T up to float rounding
        while self.next_index < len(self.events) and self.events[self.next_index].time <= t + 1e-9:
            out.append(self.events[self.next_index])
            self.next_index += 1
        return out


# --------------------------------------------------------------------------
# Plant
# --------------------------------------------------------------------------

@dataclass
class PlantConfig:
    T: float = 2.0
    tau_avr: Union[float, Mapping[str, float]] = 6.0
    reactive_sign: int = 1
    v_hv: float = 1.02
    tap_step: float = 0.015
    tap_min: int = -6
    tap_max: int = 6
    controlled_nodes: Tuple[str, ...] = CONTROLLED_NODES
    measured_dgs: Tuple[str, ...] = MEASURED_DGS
    pf_tol: float = 1e-8
    pf_max_iter: int = 100
    #: cap |q| at sqrt(S_n^2 - p^2), S_n taken as the nominal DG power in MVA
    capability_limit: bool = True


@dataclass
class Measurements:
    time: float
    v: np.ndarray          # controlled-node voltage magnitudes, p.u.
    d: np.ndarray          # measured disturbances: P then exogenous Q of the measured DGs, p.u.
    dg_p: np.ndarray       # all DG active powers, p.u.
    dg_q: np.ndarray       # delivered DG reactive powers, p.u.
    tap: int
    events: Tuple[Event, ...] = ()


@dataclass
class SimState:
    k: int
    time: float
    q: np.ndarray
    tap: int
    load_p: np.ndarray      # MW
    load_q: np.ndarray      # Mvar
    dg_p: np.ndarray        # MW
    dg_q_extra: np.ndarray  # Mvar, exogenous reactive offset
    solution: Optional[VoltageSolution] = None


class PlantSimulator:
    """Closed inner loop (network + AVR lags + OLTC) at sample time ``cfg.T``."""

    def __init__(self, model: NetworkModel, op: str, cfg: Optional[PlantConfig] = None,
                 net: Optional[PerUnitNetwork] = None):
        self.model = model
        self.op = op
        self.cfg = cfg or PlantConfig()
        self.net = net or to_per_unit(model)
        k = model.op_index(op)

        self.dg_ids = tuple(g.id for g in model.generators)
        self.load_ids = tuple(ld.id for ld in model.loads)
        self._dg_bus = np.array([self.net.index[g.bus] for g in model.generators])
        self._load_bus = np.array([self.net.index[ld.bus] for ld in model.loads])
        self._ctrl = np.array([self.net.index[b] for b in self.cfg.controlled_nodes])
        self._meas = np.array([self.dg_ids.index(g) for g in self.cfg.measured_dgs], dtype=int)
        self.nominal_load_p = np.array([ld.p_mw[k] for ld in model.loads])
        self.nominal_load_q = np.array([ld.q_mvar[k] for ld in model.loads])
        self.nominal_dg_p = np.array([g.p_mw[k] for g in model.generators])
        self.dg_rating = np.array([g.p_nominal_mw for g in model.generators])

        tau = self.cfg.tau_avr
        taus = np.array([tau.get(g, 6.0) if isinstance(tau, Mapping) else tau for g in self.dg_ids],
                        dtype=float)
        self.lag = np.where(taus > 0, np.exp(-self.cfg.T / np.where(taus > 0, taus, 1.0)), 0.0)

        self.schedule = EventSchedule()
        self.state = SimState(
            k=0, time=0.0, q=np.zeros(len(self.dg_ids)), tap=0,
            load_p=self.nominal_load_p.copy(), load_q=self.nominal_load_q.copy(),
            dg_p=self.nominal_dg_p.copy(), dg_q_extra=np.zeros(len(self.dg_ids)))
        self.state.solution = self._solve(self.state)

    # -- helpers -----------------------------------------------------------

    @property
    def n_dg(self) -> int:
        return len(self.dg_ids)

    @property
    def s_base(self) -> float:
        return self.model.s_base_mva

    def q_capability(self, dg_p_mw: Optional[np.ndarray] = None) -> np.ndarray:
        """Reactive capability in p.u. left by the active output and the rating."""
        p = self.state.dg_p if dg_p_mw is None else np.asarray(dg_p_mw, dtype=float)
        return np.sqrt(np.maximum(self.dg_rating ** 2 - p ** 2, 0.0)) / self.s_base

    def v_slack(self, tap: Optional[int] = None) -> float:
        tap = self.state.tap if tap is None else tap
        return self.cfg.v_hv / (1.0 + self.cfg.tap_step * tap)

    def injections(self, st: SimState, p_offset=None, q_offset=None) -> InjectionSet:
        sb = self.s_base
        s = np.zeros(self.net.n_bus, dtype=complex)
        np.add.at(s, self._load_bus, -(st.load_p + 1j * st.load_q) / sb)
        p = st.dg_p / sb
        q = st.q + st.dg_q_extra / sb
        if p_offset is not None:
            p = p + p_offset
        if q_offset is not None:
            q = q + q_offset
        np.add.at(s, self._dg_bus, p + 1j * q)
        return InjectionSet(s)

    def _solve(self, st: SimState, p_offset=None, q_offset=None) -> VoltageSolution:
        inj = self.injections(st, p_offset, q_offset)
        try:
            return solve(self.net, inj, self.v_slack(st.tap),
                         tol=self.cfg.pf_tol, max_iter=self.cfg.pf_max_iter)
        except PowerFlowDiverged as exc:
            raise PlantDivergence(f"plant load flow diverged at t={st.time:.1f} s: {exc}",
                                  self.dump(st)) from exc

    def dump(self, st: Optional[SimState] = None) -> dict:
        st = st or self.state
        return {
            "k": st.k, "time": st.time, "tap": st.tap,
            "q_pu": dict(zip(self.dg_ids, st.q.tolist())),
            "dg_p_mw": dict(zip(self.dg_ids, st.dg_p.tolist())),
            "load_p_mw": dict(zip(self.load_ids, st.load_p.tolist())),
            "load_q_mvar": dict(zip(self.load_ids, st.load_q.tolist())),
        }

    def measure(self, events: Tuple[Event, ...] = (), p_offset=None, q_offset=None) -> Measurements:
        st = self.state
        sb = self.s_base
        dg_p = st.dg_p / sb
        if p_offset is not None:
            dg_p = dg_p + p_offset
        q_extra = st.dg_q_extra / sb
        if q_offset is not None:
            q_extra = q_extra + q_offset
        d = np.concatenate([dg_p[self._meas], q_extra[self._meas]])
        return Measurements(st.time, st.solution.vm[self._ctrl].copy(), d, dg_p,
                             st.q.copy(), st.tap, events)

    def set_schedule(self, events: Sequence[Event]) -> None:
        for e in events:
            if e.target not in self.load_ids and e.target not in self.dg_ids:
                raise KeyError(f"event target {e.target!r} is neither a load nor a DG")
        self.schedule = EventSchedule(events)

    def _apply(self, ev: Event) -> None:
        st = self.state
        if ev.target in self.dg_ids:
            j = self.dg_ids.index(ev.target)
            if ev.kind == "set":
                st.dg_p[j] = ev.value
            elif ev.kind == "scale":
                st.dg_p[j] = self.nominal_dg_p[j] * (1.0 + ev.value)
            else:
                st.dg_p[j] = 0.0
        else:
            i = self.load_ids.index(ev.target)
            if ev.kind == "scale":
                st.load_p[i] = self.nominal_load_p[i] * (1.0 + ev.value)
                st.load_q[i] = self.nominal_load_q[i] * (1.0 + ev.value)
            elif ev.kind == "set":
                p0 = self.nominal_load_p[i]
                ratio = self.nominal_load_q[i] / p0 if p0 > 0 else 0.0
                st.load_p[i] = ev.value
                st.load_q[i] = ev.value * ratio
            else:
                st.load_p[i] = 0.0
                st.load_q[i] = 0.0

    # -- dynamics ----------------------------------------------------------

    def step(self, pf_refs: Sequence[float], tap_cmd: int = 0,
             p_offset: Optional[np.ndarray] = None,
             q_offset: Optional[np.ndarray] = None) -> Measurements:
        """Advance one sample.

        ``p_offset``/``q_offset`` are one-sample additive DG injections in
        p.u., used for pulse identification of disturbance channels.
        """
        pf = np.asarray(pf_refs, dtype=float)
        if pf.shape != (self.n_dg,):
            raise ValueError(f"expected {self.n_dg} power factors, got shape {pf.shape}")
        if np.any(pf < PF_MIN - _PF_TOL) or np.any(pf > PF_MAX + _PF_TOL):
            raise ValueError(f"power factors must lie in [{PF_MIN}, {PF_MAX}]: {pf}")
        if tap_cmd not in (-1, 0, 1):
            raise ValueError(f"tap command must be -1, 0 or +1, got {tap_cmd!r}")
        st = self.state

        q_ref = q_reference(st.dg_p / self.s_base, pf, self.cfg.reactive_sign)
        if self.cfg.capability_limit:
            q_ref = np.clip(q_ref, -self.q_capability(), self.q_capability())
        st.q = self.lag * st.q + (1.0 - self.lag) * q_ref

        st.k += 1
        st.time = st.k * self.cfg.T
        fired = tuple(self.schedule.due(st.time))
        for ev in fired:
            self._apply(ev)

        st.tap = int(min(max(st.tap + tap_cmd, self.cfg.tap_min), self.cfg.tap_max))
        st.solution = self._solve(st, p_offset, q_offset)
        return self.measure(fired, p_offset, q_offset)

    def run_to_steady_state(self, pf_refs: Sequence[float], tol: float = 1e-9,
                            max_steps: int = 900) -> int:
        """Step with frozen inputs until the voltages stop moving.

        Returns the number of steps after which the state had settled (the
        final confirming step is not counted).  Resets the clock to zero so
        experiments start at t = 0 from the settled state.
        """
        if self.schedule.pending:
            raise SettlingError("cannot settle with pending events in the schedule")
        prev = self.state.solution.vm.copy()
        for n in range(1, max_steps + 1):
            self.step(pf_refs)
            vm = self.state.solution.vm
            change = float(np.max(np.abs(vm - prev)))
            prev = vm.copy()
            if change < tol:
                self.state.k = 0
                self.state.time = 0.0
                return n - 1
        raise SettlingError(f"plant did not settle within {max_steps} steps "
                            f"(last change {change:.3e})")
