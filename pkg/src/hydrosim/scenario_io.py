"""Scenario files, telemetry ingestion and CSV output.

A scenario is a JSON document validated against
``hydrosim/data/scenario.schema.json``. Loading fills every default into
the document, resolves file references to absolute paths and checks the
domain invariants by building the domain objects once, so a loaded
:class:`Scenario` is known to be usable. Lengths in the file are in the
declared ``length_unit`` and converted to metres when domain objects are
built; volumes are m3 and flows m3/s throughout.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass
from datetime import datetime
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema
import numpy as np

from hydrosim.dynamics import (
    GovernorParams, GridModel, LossEvent, ResponsiveUnit, TurbineModel, UFLSStage, init_steady_state,
)
from hydrosim.errors import EmptySeries, MalformedRow, ParseError, TopologyError, ValidationError
from hydrosim.hydro_physics import Length, TurbineUnit, compute_head, to_metres
from hydrosim.protection import DEFAULT_ENVELOPES, Band, FleetClass, RideThroughEnvelope
from hydrosim.river_network import BasinNetwork, BasinNode, Reach

log = logging.getLogger(__name__)

NAMED_CONDITIONS = {"high": 1.0, "nominal": 0.9, "low": 0.79}
FLOAT_FORMAT = "{:.9g}"

_UNIT_FIELDS = [
    "full_gate_flow_coeff", "eta_peak", "q_hat_peak", "shape_exponent", "shape_width", "head_coeff",
    "usable_flow_frac", "min_load_frac", "max_load_frac", "forbidden_bands", "water_time_constant_Tw",
    "no_load_flow_qnl", "turbine_gain_At", "inertia_H", "mva_rating", "shaft_speed",
]


def configure_logging() -> None:
    level = os.environ.get("HYDROSIM_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


# -- telemetry ---------------------------------------------------------------

@dataclass
class TelemetrySeries:
    timestamps: list[datetime]
    forebay: np.ndarray
    tailwater: np.ndarray
    unit: str = "m"

    @property
    def head(self) -> np.ndarray:
        return np.array([
            compute_head(Length(f, self.unit), Length(t, self.unit)).head.value
            for f, t in zip(self.forebay, self.tailwater)
        ])


def _parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text)


def ingest_forebay_csv(path: str | Path, tailwater_default: float, unit: str = "m") -> TelemetrySeries:
    """Read ``timestamp,forebay[,tailwater]`` telemetry.

    Blank tailwater cells take ``tailwater_default``; blank forebay cells are
    filled by linear interpolation in time between the nearest readings,
    or copied from the nearest reading at either end.
    """
    stamps, fore, tail = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptySeries(f"{path}: file is empty")
        header = [h.strip().lower() for h in header]
        if header[:2] != ["timestamp", "forebay"] or len(header) > 3 or (len(header) == 3 and header[2] != "tailwater"):
            raise MalformedRow(1, f"header must be 'timestamp,forebay[,tailwater]', got {','.join(header)}")
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) > len(header) or len(row) < 2:
                raise MalformedRow(rownum, f"expected {len(header)} fields, got {len(row)}")
            try:
                ts = _parse_timestamp(row[0])
            except ValueError:
                raise MalformedRow(rownum, f"bad timestamp {row[0]!r}") from None
            if stamps and ts <= stamps[-1]:
                raise MalformedRow(rownum, "timestamps must be strictly increasing")
            try:
                f = float(row[1]) if row[1].strip() else math.nan
                t = float(row[2]) if len(row) > 2 and row[2].strip() else tailwater_default
            except ValueError as exc:
                raise MalformedRow(rownum, str(exc)) from None
            stamps.append(ts)
            fore.append(f)
            tail.append(t)
    if not stamps:
        raise EmptySeries(f"{path}: no data rows")
    fore = np.array(fore)
    known = ~np.isnan(fore)
    if not known.any():
        raise EmptySeries(f"{path}: every forebay value is missing")
    if not known.all():
        secs = np.array([(s - stamps[0]).total_seconds() for s in stamps])
        fore[~known] = np.interp(secs[~known], secs[known], fore[known])
    return TelemetrySeries(stamps, fore, np.array(tail, dtype=float), unit)


def read_inflow_csv(path: str | Path) -> dict[str, list[float]]:
    """Lateral inflow table: one column per node id (m3/s), one row per
    routing step; an optional leading ``step`` or ``timestamp`` column is
    ignored."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptySeries(f"{path}: file is empty")
        header = [h.strip() for h in header]
        skip = 1 if header and header[0].lower() in ("step", "timestamp", "t") else 0
        cols = {h: [] for h in header[skip:]}
        for rownum, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedRow(rownum, f"expected {len(header)} fields, got {len(row)}")
            for h, cell in zip(header[skip:], row[skip:]):
                try:
                    cols[h].append(float(cell))
                except ValueError:
                    raise MalformedRow(rownum, f"bad number {cell!r} in column {h!r}") from None
    if not cols or not next(iter(cols.values())):
        raise EmptySeries(f"{path}: no data rows")
    return cols


# -- CSV output ----------------------------------------------------------------

def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT.format(float(value))
    return str(value)


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    atomic_write_text(path, csv_text(header, rows))


def read_csv_table(path: str | Path) -> tuple[list[str], list[list]]:
    """Generic reader for CSVs written by this package; numeric cells come
    back as floats, blanks as ``None``, anything else as text."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptySeries(f"{path}: file is empty")
        rows = []
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise MalformedRow(rownum, f"expected {len(header)} fields, got {len(row)}")
            parsed = []
            for cell in row:
                if cell == "":
                    parsed.append(None)
                    continue
                try:
                    parsed.append(float(cell))
                except ValueError:
                    parsed.append(cell)
            rows.append(parsed)
    return header, rows


def read_frequency_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Time and frequency columns (``t``, ``f``) of a frequency trace CSV."""
    header, rows = read_csv_table(path)
    if len(header) < 2 or header[0] != "t" or header[1] != "f":
        raise MalformedRow(1, "frequency CSV must start with columns 't,f'")
    if not rows:
        raise EmptySeries(f"{path}: no samples")
    t = np.array([r[0] for r in rows], dtype=float)
    f = np.array([r[1] for r in rows], dtype=float)
    return t, f


def read_metrics(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


# -- scenario ------------------------------------------------------------------

@lru_cache(maxsize=1)
def scenario_schema() -> dict:
    text = resources.files("hydrosim").joinpath("data/scenario.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _defaulting_validator():
    base = jsonschema.Draft7Validator

    def set_defaults(validator, properties, instance, schema):
        if isinstance(instance, dict):
            for name, sub in properties.items():
                if "default" in sub and name not in instance:
                    instance[name] = copy.deepcopy(sub["default"])
        yield from base.VALIDATORS["properties"](validator, properties, instance, schema)

    return jsonschema.validators.extend(base, {"properties": set_defaults})


def _field_path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


class Scenario:
    """A validated, fully defaulted scenario document.

    ``data`` is the normalised JSON object; two scenarios compare equal when
    their normalised documents do.
    """

    def __init__(self, data: dict, source: Path | None = None):
        self.data = data
        self.source = source
        self.telemetry: dict[str, TelemetrySeries] = {}
        self.inflow_table: dict[str, list[float]] | None = None

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.data == other.data

    def __repr__(self):
        return f"Scenario(name={self.name!r}, nodes={[n['id'] for n in self.data['nodes']]})"

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def length_unit(self) -> str:
        return self.data["length_unit"]

    def m(self, value: float | None) -> float | None:
        return None if value is None else to_metres(value, self.length_unit)

    @property
    def head_scale(self) -> float | None:
        wc = self.data["water_condition"]
        if isinstance(wc, str):
            return NAMED_CONDITIONS[wc]
        return wc.get("head_scale")

    @property
    def solver(self) -> dict:
        return self.data["solver"]

    def node_spec(self, node_id: str) -> dict:
        for n in self.data["nodes"]:
            if n["id"] == node_id:
                return n
        raise KeyError(node_id)

    def unit_groups(self, node_id: str) -> list[tuple[TurbineUnit, dict]]:
        """One domain unit per unit entry (``count`` not expanded)."""
        out = []
        for spec in self.node_spec(node_id)["units"]:
            kwargs = {k: spec[k] for k in _UNIT_FIELDS if k in spec and spec[k] is not None}
            out.append((TurbineUnit(
                unit_id=spec["id"], turbine_type=spec["type"], rated_power=spec["rated_power"],
                rated_head=self.m(spec["rated_head"]), rated_flow=spec["rated_flow"], **kwargs,
            ), spec))
        return out

    def units(self, node_id: str) -> list[TurbineUnit]:
        """Domain units with ``count`` expanded into ``id-1 .. id-n``."""
        out = []
        for unit, spec in self.unit_groups(node_id):
            n = spec["count"]
            if n == 1:
                out.append(unit)
                continue
            for k in range(1, n + 1):
                clone = copy.copy(unit)
                clone.unit_id = f"{unit.unit_id}-{k}"
                out.append(clone)
        return out

    def network(self) -> BasinNetwork:
        nodes = []
        for n in self.data["nodes"]:
            table = n["storage_elevation_table"]
            nodes.append(BasinNode(
                node_id=n["id"], kind=n["kind"],
                tailwater_elevation=self.m(n["tailwater_elevation"]),
                storage_elevation_table=None if table is None else [(s, self.m(e)) for s, e in table],
                min_storage=n["min_storage"], max_storage=n["max_storage"],
                initial_storage=n["initial_storage"],
                forebay_elevation=self.m(n["forebay_elevation"]),
                min_environmental_flow=n["min_environmental_flow"],
                min_generation=n["min_generation"],
                plant=self.units(n["id"]),
            ))
        reaches = [Reach(r["from"], r["to"], r["travel_time"]) for r in self.data["reaches"]]
        return BasinNetwork(nodes, reaches)

    def rated_head(self, node_id: str) -> float | None:
        groups = self.unit_groups(node_id)
        return groups[0][0].rated_head if groups else None

    def plant_head(self, node_id: str) -> float | None:
        """Operating head (m) for static and dynamic studies: the latest
        telemetry reading when the node has a forebay CSV, otherwise the
        rated head times the water-condition scale."""
        if node_id in self.telemetry:
            tel = self.telemetry[node_id]
            return to_metres(float(tel.head[-1]), tel.unit)
        rated = self.rated_head(node_id)
        if rated is None:
            return None
        scale = self.head_scale
        return rated * (1.0 if scale is None else scale)

    def lateral_inflows(self) -> dict:
        if self.inflow_table is not None:
            return self.inflow_table
        return self.data["routing"]["lateral_inflows"] if self.data["routing"] else {}

    def grid_model(self, head_scale: float | None = None) -> GridModel:
        """Grid for frequency studies; every responsive unit entry becomes
        one governed group. ``head_scale`` overrides the per-unit head."""
        g = self.data["grid"]
        if g is None:
            raise ValidationError("a 'grid' section is required for frequency studies", "grid")
        responsive = []
        for n in self.data["nodes"]:
            head = self.plant_head(n["id"])
            for unit, spec in self.unit_groups(n["id"]):
                if not spec["responsive"]:
                    continue
                h0 = head_scale if head_scale is not None else head / unit.rated_head
                gov = GovernorParams(**spec["governor"])
                responsive.append(ResponsiveUnit(unit, gov, spec["p0"], h0, spec["count"]))
        return GridModel(
            system_base=g["system_base_mva"],
            responsive_units=responsive,
            nonresponsive_mw=g["nonresponsive_mw"],
            load_damping_D=g["load_damping"],
            ufls_stages=[UFLSStage(*s) for s in g["ufls_stages"]],
            f_nominal=g["f_nominal"],
            nonresponsive_H=g["nonresponsive_h"],
            nonresponsive_mva=g["nonresponsive_mva"],
        )

    def event(self) -> LossEvent:
        e = self.data["event"]
        if e is None:
            raise ValidationError("an 'event' section is required for frequency studies", "event")
        return LossEvent(e["loss_mw"], e["t0"])

    @property
    def turbine_model(self) -> TurbineModel:
        return TurbineModel(self.solver["turbine_model"])

    def envelopes(self) -> dict[FleetClass, RideThroughEnvelope]:
        env = dict(DEFAULT_ENVELOPES)
        for cls, bands in self.data["ridethrough"]["envelopes"].items():
            env[FleetClass(cls)] = RideThroughEnvelope(
                FleetClass(cls), [Band(math.inf if d is None else d, lo, hi) for d, lo, hi in bands]
            )
        return env

    def ridethrough_fleet(self) -> list[tuple[str, FleetClass]]:
        fleet = []
        for n in self.data["nodes"]:
            fleet.extend((u.unit_id, FleetClass.HYDRO) for u in self.units(n["id"]))
        fleet.extend((g["id"], FleetClass(g["fleet_class"])) for g in self.data["ridethrough"]["generators"])
        return fleet

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"


def _resolve(base: Path, ref: str) -> str:
    p = Path(ref)
    if not p.is_absolute():
        p = base / p
    return str(p.resolve())


def _check_domain(scn: Scenario) -> None:
    """Build every domain object once so invariant breaches surface at load
    time with the offending field path; fills unit defaults into the
    document."""
    for i, n in enumerate(scn.data["nodes"]):
        rated = set()
        for j, spec in enumerate(n["units"]):
            path = f"nodes[{i}].units[{j}]"
            for k, (lo, hi) in enumerate(spec.get("forbidden_bands") or []):
                if lo >= hi:
                    raise ValidationError(f"forbidden band ({lo}, {hi}) has lo >= hi", f"{path}.forbidden_bands[{k}]")
            try:
                kwargs = {k: spec[k] for k in _UNIT_FIELDS if k in spec and spec[k] is not None}
                unit = TurbineUnit(spec["id"], spec["type"], spec["rated_power"], scn.m(spec["rated_head"]),
                                   spec["rated_flow"], **kwargs)
                GovernorParams(**spec["governor"])
            except ValueError as exc:
                raise ValidationError(str(exc), path) from None
            for k in _UNIT_FIELDS:
                value = getattr(unit, k)
                spec[k] = [list(b) for b in value] if k == "forbidden_bands" else value
            if not 0 <= spec["p0"]:
                raise ValidationError("p0 must be >= 0", f"{path}.p0")
            rated.add(spec["rated_head"])
        if len(rated) > 1:
            raise ValidationError("units sharing a plant must share rated_head", f"nodes[{i}].units")
    ids = [u.unit_id for n in scn.data["nodes"] for u in scn.units(n["id"])]
    if len(set(ids)) != len(ids):
        raise ValidationError("unit ids (after count expansion) must be unique", "nodes")
    try:
        scn.network()
    except TopologyError as exc:
        raise ValidationError(str(exc), "reaches") from None
    except ValueError as exc:
        raise ValidationError(str(exc), "nodes") from None
    if scn.data["grid"] is not None:
        try:
            g = scn.grid_model()
            for r in g.responsive_units:
                init_steady_state(r.unit, r.governor, r.P0, r.h0)
        except ValueError as exc:
            raise ValidationError(str(exc), "grid") from None
    try:
        scn.envelopes()
    except ValueError as exc:
        raise ValidationError(str(exc), "ridethrough.envelopes") from None
    routing = scn.data["routing"]
    if routing is not None:
        known = {n["id"] for n in scn.data["nodes"]}
        for key in ("lateral_inflows", "releases"):
            for nid, series in routing[key].items():
                if nid not in known:
                    raise ValidationError(f"unknown node {nid!r}", f"routing.{key}.{nid}")
                if isinstance(series, list) and len(series) != routing["horizon"]:
                    raise ValidationError(f"expected {routing['horizon']} samples, got {len(series)}",
                                          f"routing.{key}.{nid}")


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read scenario: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, column=exc.colno) from None
    return scenario_from_dict(raw, base_dir=path.parent.resolve(), source=path)


def scenario_from_dict(raw: dict, base_dir: Path | None = None, source: Path | None = None) -> Scenario:
    data = copy.deepcopy(raw)
    base_dir = Path.cwd() if base_dir is None else base_dir
    validator = _defaulting_validator()(scenario_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ValidationError(err.message, _field_path(err.absolute_path))

    scn = Scenario(data, source)
    wc = data["water_condition"]
    if isinstance(wc, dict) and "forebay_csv" in wc:
        known = {n["id"] for n in data["nodes"]}
        for nid, ref in list(wc["forebay_csv"].items()):
            if nid not in known:
                raise ValidationError(f"unknown node {nid!r}", f"water_condition.forebay_csv.{nid}")
            full = _resolve(base_dir, ref)
            if not os.path.exists(full):
                raise ValidationError(f"telemetry file {ref!r} not found", f"water_condition.forebay_csv.{nid}")
            wc["forebay_csv"][nid] = full
            tw = scn.node_spec(nid)["tailwater_elevation"]
            try:
                scn.telemetry[nid] = ingest_forebay_csv(full, tw, data["length_unit"])
            except (MalformedRow, EmptySeries) as exc:
                raise ValidationError(str(exc), f"water_condition.forebay_csv.{nid}") from None
    if isinstance(wc, dict) and "inflow_csv" in wc:
        full = _resolve(base_dir, wc["inflow_csv"])
        if not os.path.exists(full):
            raise ValidationError(f"inflow file {wc['inflow_csv']!r} not found", "water_condition.inflow_csv")
        wc["inflow_csv"] = full
        try:
            scn.inflow_table = read_inflow_csv(full)
        except (MalformedRow, EmptySeries) as exc:
            raise ValidationError(str(exc), "water_condition.inflow_csv") from None
        if data["routing"] is not None:
            for nid, col in scn.inflow_table.items():
                if len(col) != data["routing"]["horizon"]:
                    raise ValidationError(f"column {nid!r} has {len(col)} rows, routing horizon is "
                                          f"{data['routing']['horizon']}", "water_condition.inflow_csv")
    _check_domain(scn)
    return scn


def dump_scenario(scn: Scenario, path: str | Path) -> None:
    atomic_write_text(path, scn.to_json())
