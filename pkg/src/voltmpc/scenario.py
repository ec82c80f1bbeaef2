"""
Closed-loop experiment runner.

A scenario file (TOML) describes the plant operating point, where the
impulse-response model comes from, the event schedule, the duration, the
controller settings and whether the OLTC supervisor is active::

    name = "experiment1_7am"
    op_point = "7am"
    duration = 700.0

    [model]
    source = "identify"        # or "cache" with path = "model.json"
    op_point = "7am"
    M = 90

    [oltc]
    enabled = false
    dwell_time = 75.0

    [controller]               # any MpcConfig field
    v_ref = 1.0

    [plant]                    # any PlantConfig field
    tau_avr = 6.0

    [[events]]
    time = 20.0
    target = "N32.2"
    kind = "scale"
    value = 0.5

Each sample the loop measures, runs the MPC, lets the supervisor decide on
a tap command and advances the plant.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .grid_model import NetworkModel, load_network
from .mpc import MpcConfig, MpcController
from .oltc_logic import OltcSupervisor
from .plant_sim import CONTROLLED_NODES, Event, PlantConfig, PlantDivergence, PlantSimulator
from .sysid import ImpulseResponseModel, identify_benchmark

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

FEEDER_1 = ("N03", "N06", "N11", "N14", "N18")
FEEDER_2 = ("N19", "N21", "N23", "N27", "N28", "N32")
DG_IDS = tuple(f"DG{i}" for i in range(1, 9))


class ScenarioError(ValueError):
    pass


class ScenarioAborted(RuntimeError):
    """Run stopped early; ``trace`` holds the records produced so far."""

    def __init__(self, message: str, trace: List["TraceRecord"]):
        super().__init__(message)
        self.trace = trace


# --------------------------------------------------------------------------
# Spec
# --------------------------------------------------------------------------

@dataclass
class ModelSource:
    source: str = "identify"
    op_point: str = "7am"
    M: int = 90
    path: Optional[str] = None


@dataclass
class ScenarioSpec:
    name: str
    op_point: str = "7am"
    duration: float = 700.0
    events: Tuple[Event, ...] = ()
    model: ModelSource = field(default_factory=ModelSource)
    controller: MpcConfig = field(default_factory=lambda: MpcConfig(v_ref=1.0))
    plant: PlantConfig = field(default_factory=PlantConfig)
    oltc_enabled: bool = False
    dwell_time: float = 75.0
    pf_start: Optional[float] = None
    settle_margin: float = 20.0
    output_dir: Optional[str] = None

    def validate(self) -> None:
        last = max((e.time for e in self.events), default=0.0)
        if self.duration < last + self.settle_margin:
            raise ScenarioError(
                f"{self.name}: duration {self.duration} s does not cover the last event "
                f"({last} s) plus {self.settle_margin} s settling margin")
        if self.model.source not in ("identify", "cache"):
            raise ScenarioError(f"{self.name}: model.source must be 'identify' or 'cache'")
        if self.model.source == "cache" and not self.model.path:
            raise ScenarioError(f"{self.name}: cached model source needs a path")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.plant.T))


def _build(cls, doc: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**doc)


def spec_from_dict(doc: dict, base_dir: Optional[Path] = None) -> ScenarioSpec:
    doc = dict(doc)
    name = doc.pop("name", "scenario")
    events = tuple(Event(float(e["time"]), str(e["target"]), str(e["kind"]),
                         float(e.get("value", 0.0))) for e in doc.pop("events", []))
    model = _build(ModelSource, doc.pop("model", {}), f"{name}.model")
    if model.path and base_dir is not None and not Path(model.path).is_absolute():
        model.path = str(base_dir / model.path)
    ctrl = doc.pop("controller", {})
    ctrl.setdefault("v_ref", 1.0)
    controller = _build(MpcConfig, ctrl, f"{name}.controller")
    plant = _build(PlantConfig, doc.pop("plant", {}), f"{name}.plant")
    oltc = doc.pop("oltc", {})
    spec = ScenarioSpec(
        name=name, events=events, model=model, controller=controller, plant=plant,
        oltc_enabled=bool(oltc.get("enabled", False)),
        dwell_time=float(oltc.get("dwell_time", 75.0)),
        **{k: doc.pop(k) for k in list(doc) if k in ("op_point", "duration", "pf_start",
                                                      "settle_margin", "output_dir")})
    if doc:
        raise ScenarioError(f"{name}: unknown keys {sorted(doc)}")
    spec.validate()
    return spec


def load_spec(path: Union[str, Path]) -> ScenarioSpec:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    doc.setdefault("name", path.stem)
    return spec_from_dict(doc, path.parent)


def bundled_specs() -> List[str]:
    root = resources.files("voltmpc.data").joinpath("scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def bundled_spec(name: str) -> ScenarioSpec:
    res = resources.files("voltmpc.data").joinpath("scenarios", f"{name}.toml")
    if not res.is_file():
        raise ScenarioError(f"no bundled scenario {name!r}; available: {bundled_specs()}")
    doc = tomllib.loads(res.read_text())
    doc.setdefault("name", name)
    return spec_from_dict(doc)


# --------------------------------------------------------------------------
# Trace
# --------------------------------------------------------------------------

@dataclass
class TraceRecord:
    time: float
    v: np.ndarray
    pf: np.ndarray
    eps_lo: float
    eps_hi: float
    tap: int
    marker: str = ""

    def __eq__(self, other):
        if not isinstance(other, TraceRecord):
            return NotImplemented
        return (self.time == other.time and np.array_equal(self.v, other.v)
                and np.array_equal(self.pf, other.pf) and self.eps_lo == other.eps_lo
                and self.eps_hi == other.eps_hi and self.tap == other.tap
                and self.marker == other.marker)


def csv_header(nodes=CONTROLLED_NODES, dgs=DG_IDS) -> List[str]:
    return (["time_s"] + [f"V_{n}" for n in nodes] + [f"pf_{g}" for g in dgs]
            + ["eps_lo", "eps_hi", "tap", "marker"])


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(trace: Sequence[TraceRecord], path: Union[str, Path],
              nodes=CONTROLLED_NODES, dgs=DG_IDS) -> Path:
    if not trace:
        raise ValueError("cannot write an empty trace")
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(csv_header(nodes, dgs))
            for r in trace:
                w.writerow([_fmt(r.time)] + [_fmt(x) for x in r.v] + [_fmt(x) for x in r.pf]
                           + [_fmt(r.eps_lo), _fmt(r.eps_hi), str(r.tap), r.marker])
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc
    return path


def read_csv(path: Union[str, Path]) -> List[TraceRecord]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    nv = sum(h.startswith("V_") for h in header)
    npf = sum(h.startswith("pf_") for h in header)
    out = []
    for row in rows[1:]:
        vals = row
        out.append(TraceRecord(
            float(vals[0]), np.array([float(x) for x in vals[1:1 + nv]]),
            np.array([float(x) for x in vals[1 + nv:1 + nv + npf]]),
            float(vals[1 + nv + npf]), float(vals[2 + nv + npf]), int(vals[3 + nv + npf]),
            vals[4 + nv + npf]))
    return out


PLOT_TEMPLATE = '''\
"""Voltage panels for {name}; run with python to write {png}."""
import csv

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

CSV = {csv!r}
V_MIN, V_MAX = {v_min!r}, {v_max!r}
V_REF = {v_ref!r}
FEEDERS = {feeders!r}

with open(CSV, newline="") as fh:
    rows = list(csv.DictReader(fh))
t = [float(r["time_s"]) for r in rows]

fig, axes = plt.subplots(len(FEEDERS), 1, sharex=True, figsize=(8, 6))
for ax, (title, nodes) in zip(axes, FEEDERS):
    for node in nodes:
        (line,) = ax.plot(t, [float(r["V_" + node]) for r in rows], label=node)
        ax.axhline(V_REF.get(node, 1.0), color=line.get_color(), linestyle="--", linewidth=0.8)
    ax.axhline(V_MAX, color="black", linestyle="-.", linewidth=1.0)
    ax.axhline(V_MIN, color="black", linestyle="-.", linewidth=1.0)
    ax.set_ylabel("V [p.u.]")
    ax.set_title(title)
    ax.legend(ncol=3, fontsize="small")
axes[-1].set_xlabel("time [s]")
fig.tight_layout()
fig.savefig({png!r})
'''


def write_plot_script(csv_path: Union[str, Path], script_path: Union[str, Path],
                      name: str = "trace", v_min: float = 0.9, v_max: float = 1.1,
                      v_ref: Optional[Dict[str, float]] = None) -> Path:
    """Self-contained matplotlib script drawing one voltage panel per feeder."""
    script_path = Path(script_path)
    text = PLOT_TEMPLATE.format(
        name=name, csv=str(Path(csv_path).resolve()),
        png=str(script_path.with_suffix(".png").resolve()),
        v_min=v_min, v_max=v_max, v_ref=dict(v_ref or {}),
        feeders=[("Feeder 1", list(FEEDER_1)), ("Feeder 2", list(FEEDER_2))])
    script_path.write_text(text)
    return script_path


def emit(trace: Sequence[TraceRecord], out_dir: Union[str, Path], name: str,
         formats: Sequence[str] = ("csv",), summary: Optional[dict] = None) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"csv": write_csv(trace, out_dir / f"{name}.csv")}
    if "plot-script" in formats:
        paths["plot-script"] = write_plot_script(paths["csv"], out_dir / f"plot_{name}.py", name)
    if summary is not None:
        p = out_dir / f"{name}.summary.json"
        p.write_text(json.dumps(summary, indent=1))
        paths["summary"] = p
    return paths


# --------------------------------------------------------------------------
# Run
# --------------------------------------------------------------------------

def summarize(trace: Sequence[TraceRecord], T: float, v_min: float = 0.9, v_max: float = 1.1,
              nodes=CONTROLLED_NODES) -> dict:
    V = np.array([r.v for r in trace])
    taps = np.array([r.tap for r in trace])
    above = (V > v_max).sum(axis=0) * T
    below = (V < v_min).sum(axis=0) * T
    return {
        "samples": len(trace),
        "time_outside_s": dict(zip(nodes, (above + below).tolist())),
        "time_above_s": dict(zip(nodes, above.tolist())),
        "time_below_s": dict(zip(nodes, below.tolist())),
        "total_violation_s": float((above + below).sum()),
        "v_max": float(V.max()), "v_min": float(V.min()),
        "tap_changes": int(np.count_nonzero(np.diff(taps))) if len(taps) > 1 else 0,
        "eps_lo_max": float(max(r.eps_lo for r in trace)),
        "eps_hi_max": float(max(r.eps_hi for r in trace)),
    }


_MODEL_CACHE: Dict[tuple, ImpulseResponseModel] = {}


def obtain_model(spec: ScenarioSpec, network: Optional[NetworkModel] = None) -> ImpulseResponseModel:
    src = spec.model
    if src.source == "cache":
        return ImpulseResponseModel.load(src.path)
    p = spec.plant
    key = (src.op_point, src.M, repr(p), id(network))
    if key not in _MODEL_CACHE:
        _MODEL_CACHE[key] = identify_benchmark(network, src.op_point, src.M, 1.0, p)
    return _MODEL_CACHE[key]


@dataclass
class RunResult:
    spec: ScenarioSpec
    trace: List[TraceRecord]
    summary: dict
    tap_commands: List[Tuple[float, int]]


def run(spec: ScenarioSpec, model: Optional[ImpulseResponseModel] = None,
        network: Optional[NetworkModel] = None) -> RunResult:
    """Execute the closed loop: measure, control, supervise, advance the plant."""
    spec.validate()
    network = network or load_network()
    model = model or obtain_model(spec, network)
    plant = PlantSimulator(network, spec.op_point, spec.plant)
    pf0 = model.u_op if spec.pf_start is None else np.full(plant.n_dg, spec.pf_start)
    plant.run_to_steady_state(pf0)
    plant.set_schedule(spec.events)

    ctrl = MpcController(model, spec.controller)
    sup = OltcSupervisor.from_times(spec.dwell_time, spec.plant.T)
    trace: List[TraceRecord] = []
    commands: List[Tuple[float, int]] = []
    meas = plant.measure()
    for k in range(spec.n_steps + 1):
        out = ctrl.step(meas.v, meas.d)
        marker = ";".join(f"{e.target}:{e.kind}" for e in meas.events)
        trace.append(TraceRecord(meas.time, meas.v, out.pf, out.slacks[0], out.slacks[1],
                                 meas.tap, marker))
        if out.degraded:
            raise ScenarioAborted(f"{spec.name}: controller degraded at t={meas.time:.1f} s", trace)
        tap_cmd = sup.supervise(*out.slacks) if spec.oltc_enabled else 0
        if tap_cmd:
            # stamped when it reaches the plant, i.e. the end of this sample
            commands.append((meas.time + spec.plant.T, tap_cmd))
        if k == spec.n_steps:
            break
        try:
            meas = plant.step(out.pf, tap_cmd)
        except PlantDivergence as exc:
            raise ScenarioAborted(f"{spec.name}: {exc}", trace) from exc

    summary = summarize(trace, spec.plant.T,
                        float(np.min(spec.controller.v_min)), float(np.max(spec.controller.v_max)),
                        spec.plant.controlled_nodes)
    summary.update(name=spec.name, op_point=spec.op_point, model_op_point=model.op_point,
                   oltc_enabled=spec.oltc_enabled,
                   tap_commands=[[t, c] for t, c in commands])
    return RunResult(spec, trace, summary, commands)
