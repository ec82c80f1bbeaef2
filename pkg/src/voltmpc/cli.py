"""
Command-line front end.

    voltmpc identify --op 7am -M 90 --out models/
    voltmpc run experiment1_7am --out runs/ --plot
    voltmpc batch scenarios/ --out runs/ --jobs 4
    voltmpc report runs/

``run`` and ``batch`` accept either a scenario file or the name of a bundled
scenario.  Exit codes: 0 success, 1 aborted run, 2 bad input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .grid_model import NetworkFileError, load_network
from .plant_sim import PlantConfig, PlantDivergence, SettlingError
from .scenario import (ScenarioAborted, ScenarioError, ScenarioSpec, bundled_spec, bundled_specs,
                       emit, load_spec, run)
from .sysid import IdentificationError, identify_benchmark

log = logging.getLogger("voltmpc")

EXIT_OK = 0
EXIT_ABORTED = 1
EXIT_INPUT = 2


def _resolve(target: str) -> ScenarioSpec:
    p = Path(target)
    if p.suffix == ".toml" or p.exists():
        return load_spec(p)
    return bundled_spec(target)


def _apply_overrides(spec: ScenarioSpec, args) -> ScenarioSpec:
    plant = spec.plant
    if args.pf_tol is not None:
        plant = replace(plant, pf_tol=args.pf_tol)
    if args.model is not None:
        spec.model = replace(spec.model, source="cache", path=str(args.model))
    spec.plant = plant
    if args.v_min is not None:
        spec.controller.v_min = args.v_min
    if args.v_max is not None:
        spec.controller.v_max = args.v_max
    return spec


def _run_one(spec: ScenarioSpec, out: Path, plot: bool, network_path: Optional[str]) -> dict:
    """Run and write outputs; returns a status record (also used by batch workers)."""
    network = load_network(network_path)
    formats = ("csv", "plot-script") if plot else ("csv",)
    try:
        res = run(spec, network=network)
    except (IdentificationError, PlantDivergence, SettlingError) as exc:
        return {"name": spec.name, "status": "aborted", "reason": str(exc)}
    except ScenarioAborted as exc:
        summary = {"name": spec.name, "aborted": True, "reason": str(exc)}
        if exc.trace:
            emit(exc.trace, out, spec.name, formats, summary)
        return {"name": spec.name, "status": "aborted", "reason": str(exc)}
    res.summary["aborted"] = False
    paths = emit(res.trace, out, spec.name, formats, res.summary)
    return {"name": spec.name, "status": "ok", "csv": str(paths["csv"]),
            "total_violation_s": res.summary["total_violation_s"],
            "tap_commands": res.summary["tap_commands"]}


def cmd_identify(args) -> int:
    network = load_network(args.network)
    cfg = PlantConfig() if args.pf_tol is None else PlantConfig(pf_tol=args.pf_tol)
    model = identify_benchmark(network, args.op, args.M, cfg=cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = model.save(out / f"model_{args.op}_M{args.M}.json")
    print(f"{path}  exhaustion={model.exhaustion_ratio():.3e}")
    return EXIT_OK


def cmd_run(args) -> int:
    spec = _apply_overrides(_resolve(args.scenario), args)
    rec = _run_one(spec, Path(args.out), args.plot, args.network)
    print(json.dumps(rec))
    return EXIT_OK if rec["status"] == "ok" else EXIT_ABORTED


def _batch_worker(payload):
    spec, out, plot, network = payload
    return _run_one(spec, Path(out), plot, network)


def cmd_batch(args) -> int:
    src = Path(args.directory) if args.directory else None
    if src is None:
        specs = [bundled_spec(n) for n in bundled_specs()]
    else:
        files = sorted(src.glob("*.toml"))
        if not files:
            log.error("no scenario files in %s", src)
            return EXIT_INPUT
        specs = [load_spec(f) for f in files]
    specs = [_apply_overrides(s, args) for s in specs]
    payloads = [(s, args.out, args.plot, args.network) for s in specs]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            records = list(pool.map(_batch_worker, payloads))
    else:
        records = [_batch_worker(p) for p in payloads]
    for rec in records:
        print(json.dumps(rec))
    return EXIT_OK if all(r["status"] == "ok" for r in records) else EXIT_ABORTED


def cmd_report(args) -> int:
    rows = []
    for d in args.directories:
        for p in sorted(Path(d).glob("*.summary.json")):
            rows.append(json.loads(p.read_text()))
    if not rows:
        log.error("no run summaries found")
        return EXIT_INPUT
    if args.json:
        print(json.dumps(rows, indent=1))
        return EXIT_OK
    print(f"{'scenario':28s} {'status':8s} {'viol[s]':>8s} {'worst':>6s} {'Vmax':>7s} "
          f"{'Vmin':>7s} {'eps_hi':>9s} {'eps_lo':>9s} taps")
    for s in rows:
        if s.get("aborted"):
            print(f"{s['name']:28s} {'aborted':8s} {s.get('reason', '')}")
            continue
        worst = max(s["time_outside_s"], key=s["time_outside_s"].get)
        print(f"{s['name']:28s} {'ok':8s} {s['total_violation_s']:8.0f} {worst:>6s} "
              f"{s['v_max']:7.4f} {s['v_min']:7.4f} {s['eps_hi_max']:9.2e} "
              f"{s['eps_lo_max']:9.2e} {len(s['tap_commands'])}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="voltmpc", description=__doc__.splitlines()[1])
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--seed", type=int, default=None,
                    help="seed for numpy's global generator (the closed loop itself is deterministic)")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        if out:
            p.add_argument("--out", "-o", default="runs", help="output directory")
        p.add_argument("--network", default=None, help="network file (default: bundled benchmark)")
        p.add_argument("--pf-tol", type=float, default=None, help="load-flow tolerance override")
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help=argparse.SUPPRESS)

    p = sub.add_parser("identify", help="identify and cache an impulse-response model")
    common(p)
    p.add_argument("--op", default="7am", help="operating point")
    p.add_argument("-M", type=int, default=90, help="model length in samples")
    p.set_defaults(func=cmd_identify)

    for name, helptext in (("run", "execute one scenario"), ("batch", "execute a directory of scenarios")):
        p = sub.add_parser(name, help=helptext)
        if name == "run":
            p.add_argument("scenario", help="scenario file or bundled scenario name")
        else:
            p.add_argument("directory", nargs="?", default=None,
                           help="directory of scenario files (default: all bundled scenarios)")
            p.add_argument("--jobs", "-j", type=int, default=1)
        common(p)
        p.add_argument("--model", default=None, help="cached model JSON instead of identification")
        p.add_argument("--v-min", type=float, default=None)
        p.add_argument("--v-max", type=float, default=None)
        p.add_argument("--plot", action="store_true", help="also write a plot script")
        p.set_defaults(func=cmd_run if name == "run" else cmd_batch)

    p = sub.add_parser("report", help="tabulate run summaries")
    p.add_argument("directories", nargs="+")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None:
        np.random.seed(args.seed)
    try:
        return args.func(args)
    except (IdentificationError, PlantDivergence, SettlingError) as exc:
        log.error("aborted: %s", exc)
        return EXIT_ABORTED
    except (ScenarioError, NetworkFileError, FileNotFoundError, KeyError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
