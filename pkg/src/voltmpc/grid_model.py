"""
Network data model for the radial MV benchmark.

The network file is TOML with the sections ``[bases]``, ``[line_types]``,
``[transformer_types]``, ``[buses]``, ``[branches]``, ``[transformers]``,
``[loads]`` and ``[generators]``.  Units are those of the source tables
(ohm/km, mH/km, uF/km, km, MW, Mvar, MVA, kW, percent).  Operating-point
arrays follow the order given in ``bases.operating_points``.

:func:`load_network` parses and validates a file, :func:`to_per_unit`
builds the solver-ready :class:`PerUnitNetwork`, and :func:`operating_point`
produces the bus injections of one tabulated hour.
"""

from __future__ import annotations

import math
import sys
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OPERATING_POINTS = ("1am", "7am", "1pm", "7pm")
SUBSTATION = "substation"
HV_SIDE = "HV"


class NetworkFileError(ValueError):
    """Raised when a network file cannot be parsed or violates an invariant."""


# --------------------------------------------------------------------------
# Domain records
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Bus:
    id: str
    feeder: Union[int, str]
    kind: str  # "MV" or "LV"


@dataclass(frozen=True)
class LineType:
    name: str
    kind: str
    r_ohm_per_km: float
    l_mh_per_km: float
    c_uf_per_km: float


@dataclass(frozen=True)
class Branch:
    name: str
    from_bus: str
    to_bus: str
    line_type: LineType
    length_km: float

    @property
    def kind(self) -> str:
        return self.line_type.kind

    def series_impedance_ohm(self, f_hz: float) -> complex:
        lt = self.line_type
        x = 2.0 * math.pi * f_hz * lt.l_mh_per_km * 1e-3
        return complex(lt.r_ohm_per_km, x) * self.length_km

    def shunt_susceptance_s(self, f_hz: float) -> float:
        """Total line charging susceptance in siemens."""
        return 2.0 * math.pi * f_hz * self.line_type.c_uf_per_km * 1e-6 * self.length_km


@dataclass(frozen=True)
class TransformerType:
    name: str
    rated_mva: float
    copper_loss_kw: float
    short_circuit_pct: float
    tap_count: int
    tap_step_pct: float

    def impedance_own_base(self) -> complex:
        """Series impedance in p.u. on the transformer's own rating."""
        r = self.copper_loss_kw * 1e-3 / self.rated_mva
        z = self.short_circuit_pct / 100.0
        return complex(r, math.sqrt(z * z - r * r))


@dataclass(frozen=True)
class Transformer:
    name: str
    ttype: TransformerType
    hv_bus: str
    lv_bus: str


@dataclass(frozen=True)
class LoadRecord:
    id: str
    bus: str
    category: str
    p_mw: Tuple[float, ...]
    q_mvar: Tuple[float, ...]


@dataclass(frozen=True)
class GeneratorRecord:
    id: str
    tech: str
    feeder: int
    bus: str
    p_nominal_mw: float
    p_mw: Tuple[float, ...]


@dataclass(frozen=True)
class NetworkModel:
    buses: Dict[str, Bus]
    line_types: Dict[str, LineType]
    transformer_types: Dict[str, TransformerType]
    branches: Tuple[Branch, ...]
    transformers: Tuple[Transformer, ...]
    loads: Tuple[LoadRecord, ...]
    generators: Tuple[GeneratorRecord, ...]
    s_base_mva: float = 50.0
    v_base_kv: float = 20.0
    f_hz: float = 50.0
    operating_points: Tuple[str, ...] = OPERATING_POINTS

    @property
    def substation(self) -> str:
        return next(b.id for b in self.buses.values() if b.feeder == SUBSTATION)

    @property
    def z_base_ohm(self) -> float:
        return self.v_base_kv ** 2 / self.s_base_mva

    @property
    def substation_transformer(self) -> Transformer:
        return next(t for t in self.transformers if t.lv_bus == self.substation)

    def op_index(self, op: str) -> int:
        try:
            return self.operating_points.index(op)
        except ValueError:
            raise KeyError(
                f"unknown operating point {op!r}; expected one of {self.operating_points}"
            ) from None

    def generator(self, gid: str) -> GeneratorRecord:
        for g in self.generators:
            if g.id == gid:
                return g
        raise KeyError(f"unknown generator {gid!r}")

    def load(self, lid: str) -> LoadRecord:
        for ld in self.loads:
            if ld.id == lid:
                return ld
        raise KeyError(f"unknown load {lid!r}")

    def feeder_length_km(self, feeder: int) -> float:
        return sum(b.length_km for b in self.branches if self.buses[b.to_bus].feeder == feeder
                   or self.buses[b.from_bus].feeder == feeder)


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

def _require(table: dict, key: str, where: str):
    if key not in table:
        raise NetworkFileError(f"{where}: missing field {key!r}")
    return table[key]


def _number(table: dict, key: str, where: str) -> float:
    v = _require(table, key, where)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise NetworkFileError(f"{where}.{key}: expected a number, got {v!r}")
    return float(v)


def _series(table: dict, key: str, where: str, n: int) -> Tuple[float, ...]:
    v = _require(table, key, where)
    if not isinstance(v, list) or len(v) != n:
        raise NetworkFileError(f"{where}.{key}: expected a list of {n} numbers")
    out = []
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise NetworkFileError(f"{where}.{key}[{i}]: expected a number, got {x!r}")
        out.append(float(x))
    return tuple(out)


def parse_network(text: str, source: str = "<string>") -> NetworkModel:
    """Parse network-file text into a validated :class:`NetworkModel`."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # the decoder message carries line and column
        raise NetworkFileError(f"{source}: {exc}") from exc

    for section in ("bases", "line_types", "transformer_types", "buses",
                    "branches", "transformers", "loads", "generators"):
        if section not in doc or not isinstance(doc[section], dict):
            raise NetworkFileError(f"{source}: missing section [{section}]")

    bases = doc["bases"]
    ops = tuple(bases.get("operating_points", OPERATING_POINTS))
    nop = len(ops)

    line_types = {}
    for name, t in doc["line_types"].items():
        w = f"line_types.{name}"
        line_types[name] = LineType(
            name, str(_require(t, "kind", w)),
            _number(t, "r_ohm_per_km", w), _number(t, "l_mh_per_km", w),
            _number(t, "c_uf_per_km", w))

    tr_types = {}
    for name, t in doc["transformer_types"].items():
        w = f"transformer_types.{name}"
        tr_types[name] = TransformerType(
            name, _number(t, "rated_mva", w), _number(t, "copper_loss_kw", w),
            _number(t, "short_circuit_pct", w), int(_number(t, "tap_count", w)),
            _number(t, "tap_step_pct", w))

    buses = {}
    for bid, t in doc["buses"].items():
        w = f"buses.{bid}"
        buses[bid] = Bus(bid, _require(t, "feeder", w), str(t.get("kind", "MV")))

    branches = []
    for name, t in doc["branches"].items():
        w = f"branches.{name}"
        tname = _require(t, "type", w)
        if tname not in line_types:
            raise NetworkFileError(f"{w}.type: unknown line type {tname!r}")
        branches.append(Branch(name, str(_require(t, "from", w)), str(_require(t, "to", w)),
                               line_types[tname], _number(t, "length_km", w)))

    transformers = []
    for name, t in doc["transformers"].items():
        w = f"transformers.{name}"
        tname = _require(t, "type", w)
        if tname not in tr_types:
            raise NetworkFileError(f"{w}.type: unknown transformer type {tname!r}")
        transformers.append(Transformer(name, tr_types[tname], str(_require(t, "hv_bus", w)),
                                        str(_require(t, "lv_bus", w))))

    loads = []
    for lid, t in doc["loads"].items():
        w = f"loads.{lid}"
        loads.append(LoadRecord(lid, str(_require(t, "bus", w)), str(_require(t, "category", w)),
                                _series(t, "p_mw", w, nop), _series(t, "q_mvar", w, nop)))

    gens = []
    for gid, t in doc["generators"].items():
        w = f"generators.{gid}"
        gens.append(GeneratorRecord(gid, str(_require(t, "tech", w)), int(_number(t, "feeder", w)),
                                    str(_require(t, "bus", w)), _number(t, "p_nominal_mw", w),
                                    _series(t, "p_mw", w, nop)))

    model = NetworkModel(
        buses=buses, line_types=line_types, transformer_types=tr_types,
        branches=tuple(branches), transformers=tuple(transformers),
        loads=tuple(loads), generators=tuple(gens),
        s_base_mva=_number(bases, "s_base_mva", "bases"),
        v_base_kv=_number(bases, "v_base_kv", "bases"),
        f_hz=_number(bases, "f_hz", "bases"),
        operating_points=ops,
    )
    validate(model)
    return model


def load_network(path: Union[str, Path, None] = None) -> NetworkModel:
    """Load a network file; ``None`` loads the bundled benchmark."""
    if path is None:
        text = resources.files("voltmpc.data").joinpath("benchmark.toml").read_text()
        return parse_network(text, "benchmark.toml")
    path = Path(path)
    return parse_network(path.read_text(), str(path))


def to_dict(model: NetworkModel) -> dict:
    """Inverse of :func:`parse_network`, for serialization."""
    return {
        "bases": {"s_base_mva": model.s_base_mva, "v_base_kv": model.v_base_kv,
                  "f_hz": model.f_hz, "operating_points": list(model.operating_points)},
        "line_types": {n: {"kind": t.kind, "r_ohm_per_km": t.r_ohm_per_km,
                           "l_mh_per_km": t.l_mh_per_km, "c_uf_per_km": t.c_uf_per_km}
                       for n, t in model.line_types.items()},
        "transformer_types": {n: {"rated_mva": t.rated_mva, "copper_loss_kw": t.copper_loss_kw,
                                  "short_circuit_pct": t.short_circuit_pct,
                                  "tap_count": t.tap_count, "tap_step_pct": t.tap_step_pct}
                              for n, t in model.transformer_types.items()},
        "buses": {b.id: {"feeder": b.feeder, "kind": b.kind} for b in model.buses.values()},
        "branches": {b.name: {"from": b.from_bus, "to": b.to_bus, "type": b.line_type.name,
                              "length_km": b.length_km} for b in model.branches},
        "transformers": {t.name: {"type": t.ttype.name, "hv_bus": t.hv_bus, "lv_bus": t.lv_bus}
                         for t in model.transformers},
        "loads": {ld.id: {"bus": ld.bus, "category": ld.category, "p_mw": list(ld.p_mw),
                          "q_mvar": list(ld.q_mvar)} for ld in model.loads},
        "generators": {g.id: {"tech": g.tech, "feeder": g.feeder, "bus": g.bus,
                              "p_nominal_mw": g.p_nominal_mw, "p_mw": list(g.p_mw)}
                       for g in model.generators},
    }


def dumps_network(model: NetworkModel) -> str:
    return tomli_w.dumps(to_dict(model))


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------

def _edges(model: NetworkModel) -> List[Tuple[str, str, str]]:
    """(name, a, b) for every element joining two buses of the model."""
    edges = [(b.name, b.from_bus, b.to_bus) for b in model.branches]
    sub = model.substation
    for t in model.transformers:
        if t.lv_bus == sub and t.hv_bus == HV_SIDE:
            continue
        edges.append((t.name, t.hv_bus, t.lv_bus))
    return edges


def bus_order(model: NetworkModel) -> Tuple[List[str], Dict[str, Tuple[str, str]]]:
    """Breadth-first bus order from the substation and each bus's (parent, element)."""
    adj: Dict[str, List[Tuple[str, str]]] = {b: [] for b in model.buses}
    for name, a, b in _edges(model):
        adj[a].append((b, name))
        adj[b].append((a, name))
    root = model.substation
    order = [root]
    parent: Dict[str, Tuple[str, str]] = {}
    seen = {root}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v, name in adj[u]:
            if v in seen:
                continue
            seen.add(v)
            parent[v] = (u, name)
            order.append(v)
            queue.append(v)
    return order, parent


def validate(model: NetworkModel) -> None:
    """Check every model invariant; raise :class:`NetworkFileError` naming the first violation."""
    subs = [b.id for b in model.buses.values() if b.feeder == SUBSTATION]
    if len(subs) != 1:
        raise NetworkFileError(f"expected exactly one substation bus, found {len(subs)}")

    for lt in model.line_types.values():
        if min(lt.r_ohm_per_km, lt.l_mh_per_km, lt.c_uf_per_km) < 0:
            raise NetworkFileError(f"line_types.{lt.name}: line constants must be nonnegative")
    for tt in model.transformer_types.values():
        if tt.rated_mva <= 0:
            raise NetworkFileError(f"transformer_types.{tt.name}: rated_mva must be positive")
        r = tt.copper_loss_kw * 1e-3 / tt.rated_mva
        if not tt.short_circuit_pct / 100.0 > r:
            raise NetworkFileError(
                f"transformer_types.{tt.name}: short-circuit impedance must exceed resistance")

    for b in model.branches:
        if not b.length_km > 0:
            raise NetworkFileError(f"branches.{b.name}: length_km must be positive")

    for name, a, b in _edges(model):
        for bus in (a, b):
            if bus not in model.buses:
                raise NetworkFileError(f"{name}: unknown bus {bus!r}")

    # radiality: n-1 elements, connected, every non-root bus has one parent
    edges = _edges(model)
    order, _ = bus_order(model)
    if len(order) != len(model.buses):
        missing = sorted(set(model.buses) - set(order))
        raise NetworkFileError(f"radiality violated: buses not connected to substation: {missing}")
    if len(edges) != len(model.buses) - 1:
        raise NetworkFileError(
            f"radiality violated: {len(edges)} elements for {len(model.buses)} buses (cycle present)")

    for ld in model.loads:
        if ld.bus not in model.buses:
            raise NetworkFileError(f"loads.{ld.id}: unknown bus {ld.bus!r}")
        if min(ld.p_mw + ld.q_mvar) < 0:
            raise NetworkFileError(f"loads.{ld.id}: demands must be nonnegative")
    ids = [ld.id for ld in model.loads]
    if len(set(ids)) != len(ids):
        raise NetworkFileError("load ids must be unique")

    for g in model.generators:
        if g.bus not in model.buses:
            raise NetworkFileError(f"generators.{g.id}: unknown bus {g.bus!r}")
        if min(g.p_mw) < 0 or max(g.p_mw) > g.p_nominal_mw:
            raise NetworkFileError(f"generators.{g.id}: p_mw must lie in [0, p_nominal_mw]")


# --------------------------------------------------------------------------
# Per-unit network
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PerUnitNetwork:
    """Radial network in solver form, buses in breadth-first order from the root.

    ``parent[i]`` is the upstream bus of bus ``i`` (``-1`` for the root) and
    ``z[i]`` the series impedance of the element feeding bus ``i``.
    """

    bus_ids: Tuple[str, ...]
    parent: np.ndarray
    element: Tuple[str, ...]
    z: np.ndarray
    y_shunt: np.ndarray
    s_base_mva: float
    v_base_kv: float
    index: Dict[str, int] = field(repr=False)

    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def z_base_ohm(self) -> float:
        return self.v_base_kv ** 2 / self.s_base_mva

    def impedance_ohm(self, bus: str) -> complex:
        return complex(self.z[self.index[bus]]) * self.z_base_ohm

    def admittance_matrix(self) -> np.ndarray:
        """Dense bus admittance matrix (used by independent checks)."""
        n = self.n_bus
        Y = np.zeros((n, n), dtype=complex)
        for i in range(1, n):
            p = self.parent[i]
            y = 1.0 / self.z[i]
            Y[i, i] += y
            Y[p, p] += y
            Y[i, p] -= y
            Y[p, i] -= y
        Y[np.diag_indices(n)] += self.y_shunt
        return Y


def transformer_impedance_pu(tt: TransformerType, s_base_mva: float) -> complex:
    """Series impedance of a transformer on the system base."""
    return tt.impedance_own_base() * (s_base_mva / tt.rated_mva)


def to_per_unit(model: NetworkModel) -> PerUnitNetwork:
    order, parent = bus_order(model)
    index = {b: i for i, b in enumerate(order)}
    n = len(order)
    zb = model.z_base_ohm
    elements = {b.name: b for b in model.branches}
    elements.update({t.name: t for t in model.transformers})

    par = np.full(n, -1, dtype=int)
    z = np.zeros(n, dtype=complex)
    ysh = np.zeros(n, dtype=complex)
    names = [""] * n
    for bus, (up, name) in parent.items():
        i = index[bus]
        par[i] = index[up]
        names[i] = name
        el = elements[name]
        if isinstance(el, Branch):
            z[i] = el.series_impedance_ohm(model.f_hz) / zb
            half = 0.5j * el.shunt_susceptance_s(model.f_hz) * zb
            ysh[i] += half
            ysh[index[up]] += half
        else:
            z[i] = transformer_impedance_pu(el.ttype, model.s_base_mva)
    return PerUnitNetwork(tuple(order), par, tuple(names), z, ysh,
                          model.s_base_mva, model.v_base_kv, index)


# --------------------------------------------------------------------------
# Injections
# --------------------------------------------------------------------------

@dataclass
class InjectionSet:
    """Complex bus injections in p.u., aligned with ``PerUnitNetwork.bus_ids``.

    Generation is positive, load negative.  The root entry is ignored by the
    solver (slack).
    """

    s: np.ndarray

    def copy(self) -> "InjectionSet":
        return InjectionSet(self.s.copy())


def operating_point(model: NetworkModel, op: str,
                    net: Optional[PerUnitNetwork] = None,
                    dg_q_mvar: Optional[Dict[str, float]] = None) -> InjectionSet:
    """Bus injections at a tabulated operating point.

    DG reactive output is zero (unity power factor) unless given in
    ``dg_q_mvar``.
    """
    k = model.op_index(op)
    net = net or to_per_unit(model)
    s = np.zeros(net.n_bus, dtype=complex)
    sb = model.s_base_mva
    for ld in model.loads:
        s[net.index[ld.bus]] -= complex(ld.p_mw[k], ld.q_mvar[k]) / sb
    dg_q_mvar = dg_q_mvar or {}
    for g in model.generators:
        s[net.index[g.bus]] += complex(g.p_mw[k], dg_q_mvar.get(g.id, 0.0)) / sb
    return InjectionSet(s)
