import math

import pytest
from hypothesis import given, settings, strategies as st

from hydrosim.errors import InvalidHead, NegativeHead, UnitMismatch
from hydrosim.hydro_physics import (
    EfficiencyQuery, Length, TurbineType, TurbineUnit, compute_head, derate_factor, derate_max_power,
    efficiency, gate_to_flow, head_factor, mechanical_power,
)

import oracles

ALL_TYPES = list(TurbineType)


def make(kind, **kw):
    return TurbineUnit("u", kind, rated_power=100.0, rated_head=50.0, rated_flow=200.0, **kw)


# -- head --------------------------------------------------------------------

def test_head_grand_coulee_nominal_and_drawn_down():
    assert compute_head(Length(330, "ft"), Length(0, "ft")).head == Length(330, "ft")
    assert compute_head(Length(260, "ft"), Length(0, "ft")).head == Length(260, "ft")


def test_zero_head_is_not_operable():
    hs = compute_head(Length(12.5), Length(12.5))
    assert hs.head.value == 0 and not hs.operable


def test_negative_head_and_unit_mismatch():
    with pytest.raises(NegativeHead):
        compute_head(Length(10.0), Length(11.0))
    with pytest.raises(UnitMismatch):
        compute_head(Length(10.0, "ft"), Length(1.0, "m"))
    with pytest.raises(UnitMismatch):
        Length(1.0, "furlong")


def test_length_conversion_round_trip():
    assert Length(330, "ft").to_m() == pytest.approx(100.584)
    assert Length(100.584, "m").to("ft").value == pytest.approx(330)


@given(st.floats(0.0, 1e4), st.floats(0.0, 1e4))
def test_head_never_exceeds_forebay(tw, extra):
    hs = compute_head(Length(tw + extra), Length(tw))
    assert 0 <= hs.head.value <= hs.forebay_elevation.value + 1e-9


# -- derating ----------------------------------------------------------------

def test_derate_identity_zero_and_grand_coulee():
    assert derate_max_power(250.0, 80.0, 80.0) == 250.0
    assert derate_max_power(250.0, 0.0, 80.0) == 0.0
    p = derate_max_power(6500.0, Length(260, "ft"), Length(330, "ft"))
    assert p == pytest.approx(6500 * oracles.derate(260, 330), rel=1e-12)
    assert 1 - p / 6500 > 0.30


def test_derate_rejects_bad_heads():
    with pytest.raises(InvalidHead):
        derate_factor(10.0, 0.0)
    with pytest.raises(InvalidHead):
        derate_max_power(100.0, -1.0, 10.0)
    with pytest.raises(UnitMismatch):
        derate_max_power(100.0, Length(10.0), 10.0)


def test_derate_mixed_length_units():
    assert derate_max_power(100.0, Length(100.584, "m"), Length(330, "ft")) == pytest.approx(100.0)


@given(st.floats(0.0, 500.0), st.floats(0.0, 500.0), st.floats(1.0, 500.0))
def test_derate_monotone_in_head(h1, h2, rated):
    lo, hi = sorted((h1, h2))
    assert derate_max_power(100.0, lo, rated) <= derate_max_power(100.0, hi, rated)


# -- efficiency --------------------------------------------------------------

@pytest.mark.parametrize("kind", ALL_TYPES)
def test_peak_and_no_flow(kind):
    u = make(kind)
    assert efficiency(u, EfficiencyQuery(u.q_hat_peak, 1.0)) == u.eta_peak
    assert efficiency(u, EfficiencyQuery(0.0, 1.0)) == 0.0
    assert head_factor(u, 1.0) == 1.0


def test_francis_loses_efficiency_at_low_head():
    u = make("Francis")
    assert efficiency(u, 0.5, 0.8) < efficiency(u, 0.5, 1.0)


def test_kaplan_flatter_than_propeller():
    k, p = make("Kaplan"), make("Propeller")
    off = 0.3
    assert efficiency(k, k.q_hat_peak - off) / k.eta_peak > efficiency(p, p.q_hat_peak - off) / p.eta_peak


def test_efficiency_query_invariants():
    with pytest.raises(ValueError):
        EfficiencyQuery(-0.1, 1.0)
    with pytest.raises(ValueError):
        EfficiencyQuery(0.5, 0.0)


@pytest.mark.parametrize("kind", ALL_TYPES)
def test_argmax_at_peak_flow(kind):
    u = make(kind)
    grid = [i / 1000 for i in range(0, 1201)]
    best = max(grid, key=lambda q: efficiency(u, q, 1.0))
    assert abs(best - u.q_hat_peak) <= 1e-3


@settings(max_examples=200)
@given(st.sampled_from(ALL_TYPES), st.floats(0.0, 1.5), st.floats(0.05, 2.0))
def test_efficiency_bounded(kind, q, h):
    u = make(kind)
    assert 0.0 <= efficiency(u, q, h) <= u.eta_peak


@settings(max_examples=200)
@given(st.sampled_from(ALL_TYPES), st.floats(0.0, 1.5), st.floats(0.0, 1.5), st.floats(0.3, 1.5))
def test_efficiency_monotone_away_from_peak(kind, a, b, h):
    u = make(kind)
    near, far = sorted((a, b), key=lambda q: abs(q - u.q_hat_peak))
    same_side = (near - u.q_hat_peak) * (far - u.q_hat_peak) >= 0
    if same_side:
        assert efficiency(u, far, h) <= efficiency(u, near, h) + 1e-15


@settings(max_examples=200)
@given(st.sampled_from(ALL_TYPES), st.floats(0.0, 1.4), st.floats(0.3, 1.5))
def test_efficiency_continuous(kind, q, h):
    # Lipschitz bound over a 1e-6 step; the slope of every shipped shape is < 20
    u = make(kind)
    step = 1e-6
    e0 = efficiency(u, q, h)
    assert abs(efficiency(u, q + step, h) - e0) <= 20 * step
    assert abs(efficiency(u, q, h + step) - e0) <= 20 * step


def test_type_defaults_can_be_overridden():
    u = make("Francis", eta_peak=0.9, q_hat_peak=0.7, forbidden_bands=[])
    assert u.eta_peak == 0.9 and u.q_hat_peak == 0.7 and u.forbidden_bands == ()
    assert make("Francis").forbidden_bands == ((0.4, 0.6),)


@pytest.mark.parametrize("kw", [
    dict(min_load_frac=0.5, max_load_frac=0.4),
    dict(forbidden_bands=[(0.6, 0.4)]),
    dict(forbidden_bands=[(0.05, 0.2)]),
    dict(forbidden_bands=[(0.3, 0.5), (0.4, 0.6)]),
    dict(water_time_constant_Tw=0.0),
    dict(turbine_gain_At=-1.0),
    dict(no_load_flow_qnl=1.0),
    dict(inertia_H=0.0),
    dict(eta_peak=1.2),
])
def test_unit_invariants(kw):
    with pytest.raises(ValueError):
        make("Francis", **kw)


# -- conversion --------------------------------------------------------------

def test_mechanical_power_examples():
    assert mechanical_power(100.0, 100.0, 0.9) == pytest.approx(88.29, abs=1e-9)
    assert mechanical_power(0.0, 80.0, 0.9) == 0.0
    assert mechanical_power(40.0, 80.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        mechanical_power(-1.0, 1.0, 0.5)


@given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0, 1), st.floats(0.1, 10))
def test_mechanical_power_bilinear(q, h, eta, c):
    assert mechanical_power(q * c, h, eta) == pytest.approx(c * mechanical_power(q, h, eta), rel=1e-12, abs=1e-12)
    assert mechanical_power(q, h * c, eta) == pytest.approx(c * mechanical_power(q, h, eta), rel=1e-12, abs=1e-12)
    assert mechanical_power(q, h, eta) == pytest.approx(oracles.hydraulic_mw(q, h, eta), rel=1e-12, abs=1e-12)


def test_gate_to_flow():
    assert gate_to_flow(1.0, 1.0) == 1.0
    assert gate_to_flow(0.5, 0.81) == pytest.approx(0.45)
    assert gate_to_flow(1.0, 0.64, full_gate_flow_coeff=1.1) == pytest.approx(1.1 * 0.8)
    with pytest.raises(ValueError):
        gate_to_flow(1.1, 1.0)
    assert math.isfinite(gate_to_flow(0.0, 1e-6))
