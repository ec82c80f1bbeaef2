"""
Truncated impulse-response identification by single-sample pulses.

A pulse plant exposes ``ny``, ``nu``, ``nd``, ``output()`` (current output,
absolute) and ``advance(du, dd)`` which applies input deviation ``du`` and
disturbance deviation ``dd`` for one sample and returns the next output.
:class:`BenchmarkPulsePlant` adapts :class:`~voltmpc.plant_sim.PlantSimulator`
to that protocol; :class:`LtiPlant` is a discrete state-space test plant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .grid_model import NetworkModel, load_network
from .plant_sim import CONTROLLED_NODES, MEASURED_DGS, PlantConfig, PlantDivergence, PlantSimulator

FORMAT_VERSION = 1


class IdentificationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChannelRegistry:
    outputs: Tuple[str, ...]
    inputs: Tuple[str, ...]
    disturbances: Tuple[str, ...]

    def __post_init__(self):
        for name, chans in (("outputs", self.outputs), ("inputs", self.inputs),
                            ("disturbances", self.disturbances)):
            if len(set(chans)) != len(chans):
                raise ValueError(f"duplicate channel names in {name}")

    @property
    def ny(self) -> int:
        return len(self.outputs)

    @property
    def nu(self) -> int:
        return len(self.inputs)

    @property
    def nd(self) -> int:
        return len(self.disturbances)


def benchmark_registry(controlled=CONTROLLED_NODES, dgs=("DG1", "DG2", "DG3", "DG4",
                                                         "DG5", "DG6", "DG7", "DG8"),
                       measured=MEASURED_DGS) -> ChannelRegistry:
    """Voltage outputs, power-factor inputs, and P then Q of the measured DGs."""
    return ChannelRegistry(
        tuple(f"V_{n}" for n in controlled),
        tuple(f"pf_{g}" for g in dgs),
        tuple(f"P_{g}" for g in measured) + tuple(f"Q_{g}" for g in measured))


@dataclass
class ImpulseResponseModel:
    """y(k) = sum_i g[i-1] u(k-i) + gamma[i-1] d(k-i) + delta(k), in deviations.

    ``g`` has shape (M, ny, nu), ``gamma`` (M, ny, nd).  ``y_op``, ``u_op``
    and ``d_op`` are the absolute values at the identification steady state
    that define the deviation coordinates.
    """

    g: np.ndarray
    gamma: np.ndarray
    T: float
    channels: ChannelRegistry
    op_point: str = ""
    y_op: Optional[np.ndarray] = None
    u_op: Optional[np.ndarray] = None
    d_op: Optional[np.ndarray] = None

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        M, ny, nu = self.g.shape
        if M < 1:
            raise ValueError("M must be at least 1")
        if self.gamma.shape[:2] != (M, ny) or self.gamma.ndim != 3:
            raise ValueError(f"gamma shape {self.gamma.shape} inconsistent with g {self.g.shape}")
        if (ny, nu, self.gamma.shape[2]) != (self.channels.ny, self.channels.nu, self.channels.nd):
            raise ValueError("coefficient dimensions disagree with the channel registry")
        self.y_op = np.zeros(ny) if self.y_op is None else np.asarray(self.y_op, dtype=float)
        self.u_op = np.zeros(nu) if self.u_op is None else np.asarray(self.u_op, dtype=float)
        self.d_op = np.zeros(self.nd) if self.d_op is None else np.asarray(self.d_op, dtype=float)

    @property
    def M(self) -> int:
        return self.g.shape[0]

    @property
    def ny(self) -> int:
        return self.g.shape[1]

    @property
    def nu(self) -> int:
        return self.g.shape[2]

    @property
    def nd(self) -> int:
        return self.gamma.shape[2]

    def exhaustion_ratio(self) -> float:
        """||g_M||_inf / max_i ||g_i||_inf (row-sum norms)."""
        norms = np.abs(self.g).sum(axis=2).max(axis=1)
        peak = norms.max()
        return float(norms[-1] / peak) if peak > 0 else 0.0

    def simulate(self, u: np.ndarray, d: Optional[np.ndarray] = None) -> np.ndarray:
        """Response y(1..K) of the model from rest to input sequences u(0..K-1), d(0..K-1)."""
        u = np.asarray(u, dtype=float)
        K = u.shape[0]
        d = np.zeros((K, self.nd)) if d is None else np.asarray(d, dtype=float)
        y = np.zeros((K, self.ny))
        for k in range(1, K + 1):
            for i in range(1, min(k, self.M) + 1):
                y[k - 1] += self.g[i - 1] @ u[k - i] + self.gamma[i - 1] @ d[k - i]
        return y

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "voltmpc-impulse-response", "version": FORMAT_VERSION,
            "M": self.M, "T": self.T, "op_point": self.op_point,
            "channels": {"outputs": list(self.channels.outputs),
                         "inputs": list(self.channels.inputs),
                         "disturbances": list(self.channels.disturbances)},
            "y_op": self.y_op.tolist(), "u_op": self.u_op.tolist(), "d_op": self.d_op.tolist(),
            "g": self.g.tolist(), "gamma": self.gamma.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ImpulseResponseModel":
        if doc.get("format") != "voltmpc-impulse-response":
            raise ValueError("not an impulse-response model file")
        ch = doc["channels"]
        reg = ChannelRegistry(tuple(ch["outputs"]), tuple(ch["inputs"]), tuple(ch["disturbances"]))
        M = int(doc["M"])
        g = np.array(doc["g"], dtype=float).reshape(M, reg.ny, reg.nu)
        gamma = np.array(doc["gamma"], dtype=float).reshape(M, reg.ny, reg.nd)
        return cls(g, gamma, float(doc["T"]), reg, doc.get("op_point", ""),
                   np.array(doc["y_op"]), np.array(doc["u_op"]), np.array(doc["d_op"]))

    def save(self, path: Union[str, Path]) -> Path:
        # json writes floats with repr(), which round-trips exactly
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1))
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ImpulseResponseModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# Pulse plants
# --------------------------------------------------------------------------

class LtiPlant:
    """x+ = A x + B u + Bd d,  y = C x  (deviation coordinates, starts at rest)."""

    def __init__(self, A, B, C, Bd=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.asarray(B, dtype=float).reshape(self.A.shape[0], -1)
        self.C = np.asarray(C, dtype=float).reshape(-1, self.A.shape[0])
        n = self.A.shape[0]
        self.Bd = np.zeros((n, 0)) if Bd is None else np.asarray(Bd, dtype=float).reshape(n, -1)
        self.x = np.zeros(n)

    ny = property(lambda self: self.C.shape[0])
    nu = property(lambda self: self.B.shape[1])
    nd = property(lambda self: self.Bd.shape[1])

    def output(self) -> np.ndarray:
        return self.C @ self.x

    def advance(self, du, dd=None) -> np.ndarray:
        dd = np.zeros(self.nd) if dd is None else np.asarray(dd, dtype=float)
        self.x = self.A @ self.x + self.B @ np.asarray(du, dtype=float) + self.Bd @ dd
        return self.output()

    def impulse(self, M: int) -> np.ndarray:
        """Closed-form coefficients C A^(i-1) B, i = 1..M."""
        out = np.empty((M, self.ny, self.nu))
        Ak = np.eye(self.A.shape[0])
        for i in range(M):
            out[i] = self.C @ Ak @ self.B
            Ak = Ak @ self.A
        return out


class BenchmarkPulsePlant:
    """Pulse-plant view of a settled :class:`PlantSimulator`.

    Inputs are power-factor deviations from ``pf_op``; disturbances are
    one-sample P / exogenous-Q injections at the measured DGs, in p.u.
    """

    def __init__(self, plant: PlantSimulator, pf_op: Sequence[float]):
        self.plant = plant
        self.pf_op = np.asarray(pf_op, dtype=float)
        self._meas = [plant.dg_ids.index(g) for g in plant.cfg.measured_dgs]
        self.ny = len(plant.cfg.controlled_nodes)
        self.nu = plant.n_dg
        self.nd = 2 * len(self._meas)

    def output(self) -> np.ndarray:
        return self.plant.measure().v

    def disturbance(self) -> np.ndarray:
        return self.plant.measure().d

    def advance(self, du, dd=None) -> np.ndarray:
        pf = self.pf_op + np.asarray(du, dtype=float)
        p_off = q_off = None
        if dd is not None and np.any(dd):
            n = len(self._meas)
            p_off = np.zeros(self.nu)
            q_off = np.zeros(self.nu)
            p_off[self._meas] = dd[:n]
            q_off[self._meas] = dd[n:]
        return self.plant.step(pf, 0, p_off, q_off).v


# --------------------------------------------------------------------------
# Identification
# --------------------------------------------------------------------------

def _pulse_response(factory, M, du, dd, label) -> np.ndarray:
    plant = factory()
    y0 = plant.output()
    out = np.empty((M, y0.shape[0]))
    zu = np.zeros(plant.nu)
    zd = np.zeros(plant.nd)
    try:
        out[0] = plant.advance(du, dd) - y0
        for i in range(1, M):
            out[i] = plant.advance(zu, zd) - y0
    except PlantDivergence as exc:
        raise IdentificationError(f"plant diverged while pulsing channel {label}") from exc
    return out


def identify(sim_factory: Callable[[], object], M: int,
             u_amplitudes: Sequence[float], d_amplitudes: Sequence[float] = (),
             T: float = 1.0, channels: Optional[ChannelRegistry] = None,
             op_point: str = "") -> ImpulseResponseModel:
    """Identify g and gamma from one-sample pulses, one channel at a time.

    ``sim_factory`` must return a fresh pulse plant at the settled operating
    point on each call, so every channel starts from the same steady state.
    """
    probe = sim_factory()
    ny, nu, nd = len(probe.output()), probe.nu, probe.nd
    ua = np.asarray(u_amplitudes, dtype=float).reshape(-1)
    da = np.asarray(d_amplitudes, dtype=float).reshape(-1)
    if ua.size != nu or da.size != nd:
        raise ValueError(f"need {nu} input and {nd} disturbance amplitudes, "
                         f"got {ua.size} and {da.size}")
    if np.any(ua == 0) or np.any(da == 0):
        raise ValueError("pulse amplitudes must be nonzero")
    if channels is None:
        channels = ChannelRegistry(tuple(f"y{i}" for i in range(ny)),
                                   tuple(f"u{j}" for j in range(nu)),
                                   tuple(f"d{j}" for j in range(nd)))

    g = np.zeros((M, ny, nu))
    gamma = np.zeros((M, ny, nd))
    for j in range(nu):
        du = np.zeros(nu)
        du[j] = ua[j]
        g[:, :, j] = _pulse_response(sim_factory, M, du, np.zeros(nd), channels.inputs[j]) / ua[j]
    for j in range(nd):
        dd = np.zeros(nd)
        dd[j] = da[j]
        gamma[:, :, j] = _pulse_response(sim_factory, M, np.zeros(nu), dd,
                                         channels.disturbances[j]) / da[j]

    y_op = np.asarray(probe.output(), dtype=float)
    u_op = np.asarray(getattr(probe, "pf_op", np.zeros(nu)), dtype=float)
    d_op = np.asarray(probe.disturbance(), dtype=float) if hasattr(probe, "disturbance") \
        else np.zeros(nd)
    return ImpulseResponseModel(g, gamma, T, channels, op_point, y_op, u_op, d_op)


@dataclass
class LinearityReport:
    amplitudes: Tuple[float, float]
    input_deviation: np.ndarray        # per input channel
    disturbance_deviation: np.ndarray  # per disturbance channel

    @property
    def max_deviation(self) -> float:
        return float(max(self.input_deviation.max(initial=0.0),
                         self.disturbance_deviation.max(initial=0.0)))


def _relative_deviation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # per channel (last axis): max |a - b| / max |a|
    scale = np.abs(a).max(axis=(0, 1))
    diff = np.abs(a - b).max(axis=(0, 1))
    return np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), diff)


def validate_linearity(model: ImpulseResponseModel, sim_factory, amplitude_pair,
                       d_amplitude_pair=None) -> LinearityReport:
    """Compare pulse responses identified at two amplitudes.

    Amplitudes are signed scalars applied to every channel of the kind.
    """
    a1, a2 = amplitude_pair
    da1, da2 = d_amplitude_pair if d_amplitude_pair is not None else (a1, a2)
    kw = dict(T=model.T, channels=model.channels, op_point=model.op_point)
    m1 = identify(sim_factory, model.M, [a1] * model.nu, [da1] * model.nd, **kw)
    m2 = identify(sim_factory, model.M, [a2] * model.nu, [da2] * model.nd, **kw)
    return LinearityReport((a1, a2), _relative_deviation(m1.g, m2.g),
                           _relative_deviation(m1.gamma, m2.gamma))


# --------------------------------------------------------------------------
# Benchmark convenience
# --------------------------------------------------------------------------

def benchmark_factory(model: Optional[NetworkModel] = None, op: str = "7am",
                      pf_op: Union[float, Sequence[float]] = 1.0,
                      cfg: Optional[PlantConfig] = None):
    """Factory of settled benchmark pulse plants (network parsed once)."""
    model = model or load_network()
    cfg = cfg or PlantConfig()
    template = PlantSimulator(model, op, cfg)
    pf = np.broadcast_to(np.asarray(pf_op, dtype=float), (template.n_dg,)).copy()
    template.run_to_steady_state(pf)
    net = template.net

    def factory():
        plant = PlantSimulator(model, op, cfg, net=net)
        plant.run_to_steady_state(pf)
        return BenchmarkPulsePlant(plant, pf)

    return factory


def default_amplitudes(pf_op: np.ndarray, nd: int, pf_amplitude: float = 0.02,
                       d_amplitude: float = 0.05) -> Tuple[np.ndarray, np.ndarray]:
    """Pulse sizes; power-factor pulses point into [0.6, 1]."""
    pf_op = np.asarray(pf_op, dtype=float)
    ua = np.where(pf_op + pf_amplitude > 1.0, -pf_amplitude, pf_amplitude)
    return ua, np.full(nd, d_amplitude)


def identify_benchmark(model: Optional[NetworkModel] = None, op: str = "7am", M: int = 90,
                       pf_op: Union[float, Sequence[float]] = 1.0,
                       cfg: Optional[PlantConfig] = None,
                       pf_amplitude: float = 0.02, d_amplitude: float = 0.05
                       ) -> ImpulseResponseModel:
    cfg = cfg or PlantConfig()
    factory = benchmark_factory(model, op, pf_op, cfg)
    probe = factory()
    ua, da = default_amplitudes(probe.pf_op, probe.nd, pf_amplitude, d_amplitude)
    reg = benchmark_registry(cfg.controlled_nodes, probe.plant.dg_ids, cfg.measured_dgs)
    return identify(factory, M, ua, da, T=cfg.T, channels=reg, op_point=op)
