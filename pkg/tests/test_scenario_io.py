import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydrosim.errors import EmptySeries, MalformedRow, ParseError, ValidationError
from hydrosim.scenario_io import (
    NAMED_CONDITIONS, csv_text, dump_scenario, fmt, ingest_forebay_csv, load_scenario, read_csv_table,
    read_inflow_csv, scenario_from_dict,
)

MINIMAL = {
    "name": "tiny",
    "nodes": [{
        "id": "r", "kind": "RunOfRiver", "tailwater_elevation": 0.0, "forebay_elevation": 20.0,
        "units": [{"id": "K", "type": "Kaplan", "rated_power": 10.0, "rated_head": 20.0, "rated_flow": 60.0}],
    }],
}


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def with_(doc, **kw):
    d = json.loads(json.dumps(doc))
    d.update(kw)
    return d


# -- telemetry -------------------------------------------------------------------

def test_forebay_two_rows_grand_coulee(tmp_path):
    p = write(tmp_path, "f.csv", "timestamp,forebay,tailwater\n2020-01-01,330,0\n2020-02-01,260,0\n")
    ts = ingest_forebay_csv(p, 0.0, "ft")
    assert ts.head.tolist() == [330.0, 260.0] and ts.unit == "ft"


def test_forebay_single_row_and_default_tailwater(tmp_path):
    p = write(tmp_path, "f.csv", "timestamp,forebay\n2020-01-01T06:00:00,120.5\n")
    ts = ingest_forebay_csv(p, 20.5)
    assert ts.head.tolist() == [100.0]


def test_forebay_gap_interpolated(tmp_path):
    p = write(tmp_path, "f.csv", "timestamp,forebay\n2020-01-01,300\n2020-01-02,\n2020-01-03,280\n2020-01-04,\n")
    ts = ingest_forebay_csv(p, 0.0)
    assert ts.forebay.tolist() == [300.0, 290.0, 280.0, 280.0]


@pytest.mark.parametrize("text,row", [
    ("timestamp,forebay\n2020-01-02,1\n2020-01-01,2\n", 3),
    ("timestamp,forebay\n2020-01-01,abc\n", 2),
    ("timestamp,forebay\nyesterday,1\n", 2),
    ("time,level\n2020-01-01,1\n", 1),
])
def test_forebay_malformed_row_reports_row(tmp_path, text, row):
    with pytest.raises(MalformedRow) as exc:
        ingest_forebay_csv(write(tmp_path, "f.csv", text), 0.0)
    assert exc.value.row == row


def test_forebay_empty(tmp_path):
    with pytest.raises(EmptySeries):
        ingest_forebay_csv(write(tmp_path, "f.csv", "timestamp,forebay\n"), 0.0)
    with pytest.raises(EmptySeries):
        ingest_forebay_csv(write(tmp_path, "g.csv", "timestamp,forebay\n2020-01-01,\n"), 0.0)


def test_inflow_csv(tmp_path):
    p = write(tmp_path, "q.csv", "step,a,b\n0,1,2\n1,3,4\n")
    assert read_inflow_csv(p) == {"a": [1.0, 3.0], "b": [2.0, 4.0]}


# -- formatting ------------------------------------------------------------------

def test_fixed_float_format():
    assert fmt(1 / 3) == "0.333333333"
    assert fmt(4545.717782) == "4545.71778"
    assert fmt(True) == "1" and fmt(None) == "" and fmt(3) == "3"


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=1, max_size=20))
def test_csv_self_consistent(tmp_path_factory, rows):
    p = tmp_path_factory.mktemp("csv") / "x.csv"
    p.write_text(csv_text(["t", "f"], rows))
    header, back = read_csv_table(p)
    assert header == ["t", "f"]
    assert np.allclose(np.array(back, dtype=float), np.array(rows), rtol=1e-8, atol=1e-300)
    assert csv_text(["t", "f"], back) == csv_text(["t", "f"], rows)


# -- scenario loading ------------------------------------------------------------

def test_minimal_scenario_gets_defaults(tmp_path):
    scn = load_scenario(write(tmp_path, "s.json", json.dumps(MINIMAL)))
    d = scn.data
    assert d["length_unit"] == "m"
    assert d["water_condition"] == {"head_scale": 1.0}
    assert d["solver"] == {"dt": 0.01, "duration": 60.0, "resolution_mw": 0.5, "turbine_model": "nonlinear"}
    u = d["nodes"][0]["units"][0]
    assert u["count"] == 1 and u["p0"] == 0.5 and u["governor"]["permanent_droop_Rp"] == 0.05
    assert u["q_hat_peak"] == 0.75 and u["mva_rating"] == 10.0


def test_named_water_conditions():
    assert NAMED_CONDITIONS == {"high": 1.0, "nominal": 0.9, "low": 0.79}
    scn = scenario_from_dict(with_(MINIMAL, water_condition="low"))
    assert scn.plant_head("r") == pytest.approx(20.0 * 0.79)


def test_bad_band_names_the_band():
    doc = with_(MINIMAL)
    doc["nodes"][0]["units"][0]["forbidden_bands"] = [[0.6, 0.4]]
    with pytest.raises(ValidationError) as exc:
        scenario_from_dict(doc)
    assert exc.value.field == "nodes[0].units[0].forbidden_bands[0]"
    assert "0.6" in str(exc.value)


def test_missing_csv_reference(tmp_path):
    doc = with_(MINIMAL, water_condition={"forebay_csv": {"r": "nope.csv"}})
    with pytest.raises(ValidationError) as exc:
        scenario_from_dict(doc, tmp_path)
    assert exc.value.field == "water_condition.forebay_csv.r"


def test_schema_violation_has_field_path():
    doc = with_(MINIMAL)
    doc["nodes"][0]["units"][0]["type"] = "Banki"
    with pytest.raises(ValidationError) as exc:
        scenario_from_dict(doc)
    assert exc.value.field == "nodes[0].units[0].type"


def test_parse_error_line(tmp_path):
    with pytest.raises(ParseError) as exc:
        load_scenario(write(tmp_path, "s.json", '{\n  "name": "x",\n  "nodes": [,]\n}'))
    assert exc.value.line == 3


def test_duplicate_unit_ids_rejected():
    doc = with_(MINIMAL)
    doc["nodes"][0]["units"].append(dict(doc["nodes"][0]["units"][0]))
    with pytest.raises(ValidationError):
        scenario_from_dict(doc)


def test_infeasible_initial_loading_rejected():
    doc = with_(MINIMAL, water_condition="low", grid={"system_base_mva": 100.0})
    doc["nodes"][0]["units"][0]["p0"] = 0.95
    with pytest.raises(ValidationError) as exc:
        scenario_from_dict(doc)
    assert exc.value.field == "grid"


def test_routing_series_length_checked():
    doc = with_(MINIMAL, routing={"horizon": 3, "lateral_inflows": {"r": [1.0, 2.0]}})
    with pytest.raises(ValidationError) as exc:
        scenario_from_dict(doc)
    assert exc.value.field == "routing.lateral_inflows.r"


def test_count_expands_unit_ids():
    doc = with_(MINIMAL)
    doc["nodes"][0]["units"][0]["count"] = 3
    assert [u.unit_id for u in scenario_from_dict(doc).units("r")] == ["K-1", "K-2", "K-3"]


def test_feet_scenario_converted_to_metres(examples_dir):
    scn = load_scenario(examples_dir / "grand_coulee.json")
    assert scn.units("coulee")[0].rated_head == pytest.approx(330 * 0.3048)
    assert scn.plant_head("coulee") == pytest.approx(260 * 0.3048)
    assert len(scn.units("coulee")) == 24


@pytest.mark.parametrize("name", ["grand_coulee.json", "two_area_event.json", "two_unit_plant.json",
                                  "cascade_minflow.json"])
def test_round_trip(examples_dir, tmp_path, name):
    scn = load_scenario(examples_dir / name)
    out = tmp_path / "norm.json"
    dump_scenario(scn, out)
    again = load_scenario(out)
    assert again == scn
    dump_scenario(again, tmp_path / "norm2.json")
    assert (tmp_path / "norm2.json").read_bytes() == out.read_bytes()


def test_atomic_write_leaves_no_temp_files(examples_dir, tmp_path):
    dump_scenario(load_scenario(examples_dir / "two_unit_plant.json"), tmp_path / "a.json")
    assert os.listdir(tmp_path) == ["a.json"]
