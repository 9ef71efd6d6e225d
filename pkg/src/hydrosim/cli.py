"""``hydrosim`` command line: composes the library into studies.

Exit status is 0 on success, 1 when a study finds infeasibility,
constraint violations or trips, and 2 on input errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from hydrosim.dispatch import PlantDispatchProblem, dispatch_plant, fleet_dispatch
from hydrosim.dynamics import simulate_event
from hydrosim.errors import HydroSimError, StorageUnderflow, UnservedTarget
from hydrosim.hydro_physics import derate_factor, derate_max_power, from_metres, to_metres
from hydrosim.protection import evaluate_ridethrough
from hydrosim.river_network import (
    available_capacity_series, check_constraints, generation_series, route_water,
)
from hydrosim.scenario_io import (
    Scenario, atomic_write_text, configure_logging, csv_text, dump_scenario, fmt, load_scenario,
    read_frequency_csv,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FINDINGS, EXIT_INPUT = 0, 1, 2


class Study:
    """Text outputs of one sub-study plus its exit status."""

    def __init__(self):
        self.files: dict[str, str] = {}
        self.status = EXIT_OK
        self.messages: list[str] = []

    def flag(self, message: str) -> None:
        self.status = EXIT_FINDINGS
        self.messages.append(message)


def study_derate(scn: Scenario) -> Study:
    st = Study()
    unit = scn.length_unit
    rows = []
    for n in scn.data["nodes"]:
        nid = n["id"]
        units = scn.units(nid)
        if not units:
            continue
        nominal = sum(u.rated_power for u in units)
        rated = units[0].rated_head
        if nid in scn.telemetry:
            tel = scn.telemetry[nid]
            for ts, h in zip(tel.timestamps, tel.head):
                h_m = to_metres(float(h), tel.unit)
                derated = sum(derate_max_power(u.rated_power, h_m, u.rated_head) for u in units)
                rows.append([nid, ts.isoformat(), from_metres(h_m, unit), derate_factor(h_m, rated), nominal, derated])
        else:
            h_m = scn.plant_head(nid)
            derated = sum(derate_max_power(u.rated_power, h_m, u.rated_head) for u in units)
            rows.append([nid, None, from_metres(h_m, unit), derate_factor(h_m, rated), nominal, derated])
    header = ["node", "timestamp", f"head_{unit}", "derate_factor", "nominal_mw", "derated_mw"]
    st.files["derate.csv"] = csv_text(header, rows)
    return st


def study_route(scn: Scenario) -> Study:
    st = Study()
    routing = scn.data["routing"]
    if routing is None:
        raise HydroSimError("routing: section required for the route study")
    net = scn.network()
    try:
        state = route_water(net, scn.lateral_inflows(), routing["releases"], routing["dt"],
                            routing["horizon"], routing["in_transit"])
    except StorageUnderflow as exc:
        st.flag(str(exc))
        st.files["violations.csv"] = csv_text(
            ["node", "step", "kind", "value", "limit"],
            [[exc.node_id, exc.step, "StorageUnderflow", exc.storage, net.node(exc.node_id).min_storage]],
        )
        return st
    caps = available_capacity_series(net, state)
    gen = generation_series(net, state)
    rows = []
    unit = scn.length_unit
    for t in range(state.horizon):
        for nid in net.order():
            rows.append([
                t, nid, state.lateral_inflow[nid][t], state.inflow[nid][t], state.release[nid][t],
                state.spill[nid][t], state.storage[nid][t + 1], from_metres(state.head[nid][t], unit),
                caps[nid][t], gen[nid][t],
            ])
    st.files["route.csv"] = csv_text(
        ["step", "node", "lateral_m3s", "inflow_m3s", "release_m3s", "spill_m3s", "storage_m3",
         f"head_{unit}", "capacity_mw", "generation_mw"],
        rows,
    )
    violations = check_constraints(net, state, gen)
    st.files["violations.csv"] = csv_text(
        ["node", "step", "kind", "value", "limit"],
        [[v.node_id, v.step, v.kind.value, v.value, v.limit] for v in violations],
    )
    if violations:
        kinds = sorted({v.kind.value for v in violations})
        st.flag(f"{len(violations)} constraint violations ({', '.join(kinds)})")
    return st


def study_dispatch(scn: Scenario, target: float | None, node: str | None = None) -> Study:
    st = Study()
    if target is None:
        target = scn.data["dispatch"]["target_mw"]
    if target is None:
        raise HydroSimError("dispatch.target_mw: no target given (use --target)")
    res = scn.solver["resolution_mw"]
    net = scn.network()
    plants = [n for n in net.nodes if n.plant]
    if node is not None:
        plants = [net.node(node)]
    rows = []
    if len(plants) == 1:
        p = plants[0]
        sol = dispatch_plant(PlantDispatchProblem(p.plant, scn.plant_head(p.node_id), target, res))
        sols = {p.node_id: sol}
        if not sol.feasible:
            st.flag(f"target {target:g} MW infeasible at {p.node_id}; nearest {sol.total_mw:g} MW")
    else:
        try:
            fleet = fleet_dispatch([(p, scn.plant_head(p.node_id)) for p in plants], target, res)
        except UnservedTarget as exc:
            fleet = exc.result
            st.flag(str(exc))
        sols = fleet.solutions
    for pid, sol in sols.items():
        for uid, on, sp in zip(sol.unit_ids, sol.committed, sol.setpoints):
            rows.append([pid, uid, on, sp, sol.total_mw, sol.plant_efficiency, sol.feasible])
    st.files["dispatch.csv"] = csv_text(
        ["plant", "unit", "committed", "setpoint_mw", "plant_total_mw", "plant_efficiency", "feasible"], rows
    )
    return st


def study_simulate(scn: Scenario, model: str | None = None, head_scale: float | None = None):
    st = Study()
    grid = scn.grid_model(head_scale)
    res = simulate_event(grid, scn.event(), scn.solver["duration"], scn.solver["dt"],
                         model or scn.turbine_model)
    header = ["t", "f"]
    for lbl in res.unit_labels:
        header += [f"gate_{lbl}", f"flow_{lbl}", f"head_{lbl}", f"pm_{lbl}"]
    cols = [res.time, res.frequency]
    for i in range(len(res.unit_labels)):
        cols += [res.gate[:, i], res.flow[:, i], res.head[:, i], res.pm[:, i]]
    st.files["simulate.csv"] = csv_text(header, np.column_stack(cols).tolist())
    st.files["metrics.txt"] = "".join(f"{k}={fmt(v)}\n" for k, v in res.metrics().items())
    if res.frequency_collapse:
        st.flag("frequency collapse")
    return st, res


def study_ridethrough(scn: Scenario, t: np.ndarray, f: np.ndarray) -> Study:
    st = Study()
    if t.size > 1:
        steps = np.diff(t)
        dt = float(np.median(steps))
        if np.max(np.abs(steps - dt)) > 1e-6 * max(dt, 1e-12) + 1e-9:
            raise HydroSimError("frequency CSV: time column must be uniformly spaced")
    else:
        dt = 1.0
    report = evaluate_ridethrough(f, dt, scn.ridethrough_fleet(), scn.envelopes(), t_start=float(t[0]))
    rows = []
    for g in report.generators:
        b = g.violated_band
        rows.append([g.generator_id, g.fleet_class.value, g.tripped, g.trip_time,
                     None if b is None else b.max_dwell, None if b is None else b.f_low,
                     None if b is None else b.f_high])
    st.files["ridethrough.csv"] = csv_text(
        ["generator", "fleet_class", "tripped", "trip_time_s", "band_dwell_s", "band_f_low", "band_f_high"], rows
    )
    summary = "".join(f"{cls}.{k}={v}\n" for cls, s in sorted(report.summary.items()) for k, v in s.items())
    st.files["ridethrough_summary.txt"] = summary
    if report.n_tripped:
        st.flag(f"{report.n_tripped} generators tripped")
    return st


def _emit(study: Study, name: str, out: str | None) -> None:
    text = study.files[name]
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hydrosim", description="Hydropower-aware power system studies")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("derate", help="per-plant head-derated capacity")
    p.add_argument("scenario")
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("route", help="route water through the basin and check constraints")
    p.add_argument("scenario")
    p.add_argument("--out", help="basin state CSV path (default: stdout)")
    p.add_argument("--violations", help="violation CSV path (default: stderr)")

    p = sub.add_parser("dispatch", help="rough-zone-aware dispatch")
    p.add_argument("scenario")
    p.add_argument("--target", type=float, help="MW target (default: scenario dispatch.target_mw)")
    p.add_argument("--node", help="dispatch a single plant")
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("simulate", help="frequency event simulation")
    p.add_argument("scenario")
    p.add_argument("--out", help="time-series CSV path")
    p.add_argument("--metrics", help="metrics summary path (default: stdout)")
    p.add_argument("--model", choices=["nonlinear", "linearized"])
    p.add_argument("--head-scale", type=float, help="override per-unit head of every responsive unit")

    p = sub.add_parser("ridethrough", help="evaluate ride-through on a frequency CSV")
    p.add_argument("scenario")
    p.add_argument("freq_csv", help="CSV whose first columns are t,f")
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("report", help="run every applicable study into a directory")
    p.add_argument("scenario")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--target", type=float)
    return parser


def run_cli(argv: list[str] | None = None) -> int:
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        scn = load_scenario(args.scenario)
        log.info("scenario %r loaded with defaults:\n%s", scn.name, scn.to_json())
        if args.command == "derate":
            st = study_derate(scn)
            _emit(st, "derate.csv", args.out)
        elif args.command == "route":
            st = study_route(scn)
            if "route.csv" in st.files:
                _emit(st, "route.csv", args.out)
            if args.violations:
                atomic_write_text(args.violations, st.files["violations.csv"])
            elif st.status:
                sys.stderr.write(st.files["violations.csv"])
        elif args.command == "dispatch":
            st = study_dispatch(scn, args.target, args.node)
            _emit(st, "dispatch.csv", args.out)
        elif args.command == "simulate":
            st, _ = study_simulate(scn, args.model, args.head_scale)
            if args.out:
                atomic_write_text(args.out, st.files["simulate.csv"])
            _emit(st, "metrics.txt", args.metrics)
        elif args.command == "ridethrough":
            t, f = read_frequency_csv(args.freq_csv)
            st = study_ridethrough(scn, t, f)
            _emit(st, "ridethrough.csv", args.out)
            sys.stderr.write(st.files["ridethrough_summary.txt"])
        else:
            st = run_report(scn, Path(args.out_dir), args.target)
    except (HydroSimError, OSError, ValueError) as exc:
        sys.stderr.write(f"hydrosim {args.command}: {exc}\n")
        return EXIT_INPUT
    for msg in st.messages:
        sys.stderr.write(f"hydrosim {args.command}: {msg}\n")
    return st.status


def run_report(scn: Scenario, out_dir: Path, target: float | None = None) -> Study:
    """All applicable studies into ``out_dir``; the bundle's status is the
    worst sub-study status."""
    bundle = Study()
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_scenario(scn, out_dir / "scenario.normalized.json")
    studies = [study_derate(scn)]
    if scn.data["routing"] is not None:
        studies.append(study_route(scn))
    if target is not None or scn.data["dispatch"]["target_mw"] is not None:
        studies.append(study_dispatch(scn, target))
    if scn.data["grid"] is not None and scn.data["event"] is not None:
        sim, res = study_simulate(scn)
        studies.append(sim)
        studies.append(study_ridethrough(scn, res.time, res.frequency))
    for st in studies:
        for name, text in st.files.items():
            atomic_write_text(out_dir / name, text)
        bundle.messages.extend(st.messages)
        bundle.status = max(bundle.status, st.status)
    return bundle


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
