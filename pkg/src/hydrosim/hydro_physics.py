"""Hydraulic building blocks: head, head-dependent derating, turbine
efficiency surfaces and hydraulic power conversion.

Lengths that cross a module boundary carry an explicit unit tag
(:class:`Length`); everything else in the package is SI (metres, m3/s, MW).
Per-unit quantities are normalised on each unit's own ratings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from hydrosim.errors import InvalidHead, NegativeHead, UnitMismatch

RHO_WATER = 1000.0  # kg/m3
GRAVITY = 9.81  # m/s2
FT_TO_M = 0.3048

_LENGTH_FACTORS = {"m": 1.0, "ft": FT_TO_M}


@dataclass(frozen=True)
class Length:
    value: float
    unit: str = "m"

    def __post_init__(self):
        if self.unit not in _LENGTH_FACTORS:
            raise UnitMismatch(f"unknown length unit {self.unit!r}; expected 'm' or 'ft'")

    def to_m(self) -> float:
        return self.value * _LENGTH_FACTORS[self.unit]

    def to(self, unit: str) -> "Length":
        if unit == self.unit:
            return self
        return Length(self.to_m() / _LENGTH_FACTORS[unit], unit)


def to_metres(value: float, unit: str) -> float:
    return Length(value, unit).to_m()


def from_metres(value: float, unit: str) -> float:
    return value / _LENGTH_FACTORS[unit]


@dataclass(frozen=True)
class HeadState:
    forebay_elevation: Length
    tailwater_elevation: Length
    head: Length

    @property
    def operable(self) -> bool:
        return self.head.value > 0.0


class TurbineType(str, Enum):
    FRANCIS = "Francis"
    KAPLAN = "Kaplan"
    PROPELLER = "Propeller"
    PELTON = "Pelton"


# Qualitative shapes: Kaplan flat (double regulation), propeller peaky
# (fixed blade). Configuration, not measured data.
TYPE_DEFAULTS = {
    TurbineType.FRANCIS: dict(eta_peak=0.94, q_hat_peak=0.80, shape_exponent=2.2, shape_width=1.8,
                              head_coeff=0.5, forbidden_bands=((0.40, 0.60),)),
    TurbineType.KAPLAN: dict(eta_peak=0.92, q_hat_peak=0.75, shape_exponent=2.0, shape_width=0.6,
                             head_coeff=0.2, forbidden_bands=()),
    TurbineType.PROPELLER: dict(eta_peak=0.90, q_hat_peak=0.95, shape_exponent=2.0, shape_width=3.5,
                                head_coeff=0.5, forbidden_bands=()),
    TurbineType.PELTON: dict(eta_peak=0.90, q_hat_peak=0.80, shape_exponent=2.0, shape_width=0.8,
                             head_coeff=0.1, forbidden_bands=()),
}


@dataclass
class TurbineUnit:
    """One hydro unit.

    ``rated_head`` is in metres and ``rated_flow`` in m3/s. Forbidden bands
    and load limits are fractions of the (derated) maximum power. Fields left
    as ``None`` are filled from :data:`TYPE_DEFAULTS` for the turbine type.
    """

    unit_id: str
    turbine_type: TurbineType
    rated_power: float
    rated_head: float
    rated_flow: float
    full_gate_flow_coeff: float = 1.0
    eta_peak: float | None = None
    q_hat_peak: float | None = None
    shape_exponent: float | None = None
    shape_width: float | None = None
    head_coeff: float | None = None
    usable_flow_frac: float = 0.1
    min_load_frac: float = 0.10
    max_load_frac: float = 1.00
    forbidden_bands: Sequence[tuple[float, float]] | None = None
    water_time_constant_Tw: float = 1.0
    no_load_flow_qnl: float = 0.08
    turbine_gain_At: float = 1.1
    inertia_H: float = 3.5
    mva_rating: float | None = None
    shaft_speed: float = 2.0

    def __post_init__(self):
        self.turbine_type = TurbineType(self.turbine_type)
        for name, value in TYPE_DEFAULTS[self.turbine_type].items():
            if getattr(self, name) is None:
                setattr(self, name, value)
        self.forbidden_bands = tuple((float(lo), float(hi)) for lo, hi in self.forbidden_bands)
        if self.mva_rating is None:
            self.mva_rating = self.rated_power
        self.validate()

    def validate(self) -> None:
        def need(cond, what):
            if not cond:
                raise ValueError(f"unit {self.unit_id!r}: {what}")

        need(self.rated_power > 0, "rated_power must be > 0")
        need(self.rated_head > 0, "rated_head must be > 0")
        need(self.rated_flow > 0, "rated_flow must be > 0")
        need(self.full_gate_flow_coeff > 0, "full_gate_flow_coeff must be > 0")
        need(0 < self.eta_peak <= 1, "eta_peak must lie in (0, 1]")
        need(0 < self.q_hat_peak <= 1, "q_hat_peak must lie in (0, 1]")
        need(self.shape_exponent > 0 and self.shape_width >= 0, "efficiency shape parameters must be positive")
        need(self.head_coeff >= 0, "head_coeff must be >= 0")
        need(0 < self.usable_flow_frac <= self.q_hat_peak, "usable_flow_frac must lie in (0, q_hat_peak]")
        need(0 <= self.min_load_frac < self.max_load_frac <= 1,
             "require 0 <= min_load_frac < max_load_frac <= 1")
        prev_hi = None
        for i, (lo, hi) in enumerate(self.forbidden_bands):
            need(lo < hi, f"forbidden band {i} ({lo}, {hi}) has lo >= hi")
            need(self.min_load_frac <= lo and hi <= self.max_load_frac,
                 f"forbidden band {i} ({lo}, {hi}) lies outside [min_load_frac, max_load_frac]")
            need(prev_hi is None or lo >= prev_hi, f"forbidden band {i} ({lo}, {hi}) overlaps or is unsorted")
            prev_hi = hi
        need(self.water_time_constant_Tw > 0, "Tw must be > 0")
        need(self.turbine_gain_At > 0, "At must be > 0")
        need(0 <= self.no_load_flow_qnl < 1, "qnl must lie in [0, 1)")
        need(self.inertia_H > 0, "inertia_H must be > 0")
        need(self.mva_rating > 0, "mva_rating must be > 0")
        need(self.shaft_speed > 0, "shaft_speed must be > 0")


@dataclass(frozen=True)
class EfficiencyQuery:
    q_hat: float
    h_hat: float = 1.0

    def __post_init__(self):
        if self.q_hat < 0:
            raise ValueError("q_hat must be >= 0")
        if self.h_hat <= 0:
            raise ValueError("h_hat must be > 0")


def compute_head(forebay: Length, tailwater: Length) -> HeadState:
    if forebay.unit != tailwater.unit:
        raise UnitMismatch(f"forebay in {forebay.unit} but tailwater in {tailwater.unit}")
    if tailwater.value > forebay.value:
        raise NegativeHead(f"tailwater {tailwater.value} above forebay {forebay.value} {forebay.unit}")
    head = Length(forebay.value - tailwater.value, forebay.unit)
    return HeadState(forebay, tailwater, head)


def derate_factor(head: float, rated_head: float) -> float:
    if rated_head <= 0:
        raise InvalidHead(f"rated_head must be > 0, got {rated_head}")
    if head < 0:
        raise InvalidHead(f"head must be >= 0, got {head}")
    return (head / rated_head) ** 1.5


def derate_max_power(p_max_nominal: float, head, rated_head) -> float:
    """Full-gate power available at ``head``: scales with head**1.5.

    ``head`` and ``rated_head`` are either both plain numbers in the same
    unit or both :class:`Length`.
    """
    if isinstance(head, Length) or isinstance(rated_head, Length):
        if not (isinstance(head, Length) and isinstance(rated_head, Length)):
            raise UnitMismatch("head and rated_head must both be tagged lengths or both plain numbers")
        head, rated_head = head.to_m(), rated_head.to_m()
    return p_max_nominal * derate_factor(head, rated_head)


def head_factor(unit: TurbineUnit, h_hat: float) -> float:
    return max(0.0, 1.0 - unit.head_coeff * abs(h_hat - 1.0) ** 1.5)


def efficiency(unit: TurbineUnit, query: EfficiencyQuery | float, h_hat: float | None = None) -> float:
    """Turbine efficiency at per-unit flow ``q_hat`` and per-unit head ``h_hat``.

    Accepts either an :class:`EfficiencyQuery` or ``(q_hat, h_hat)``.
    Below ``usable_flow_frac`` the flow-shape term is ramped linearly to
    zero so that no flow gives no efficiency for every turbine type.
    """
    if isinstance(query, EfficiencyQuery):
        q_hat, h_hat = query.q_hat, query.h_hat
    else:
        q_hat = query
        h_hat = 1.0 if h_hat is None else h_hat
        EfficiencyQuery(q_hat, h_hat)
    shape = max(0.0, 1.0 - unit.shape_width * abs(q_hat - unit.q_hat_peak) ** unit.shape_exponent)
    if q_hat < unit.usable_flow_frac:
        shape *= q_hat / unit.usable_flow_frac
    return unit.eta_peak * shape * head_factor(unit, h_hat)


def mechanical_power(flow: float, head: float, eta: float) -> float:
    """rho*g*Q*H*eta in MW, with flow in m3/s and head in metres."""
    if flow < 0 or head < 0 or not 0 <= eta <= 1:
        raise ValueError("require flow >= 0, head >= 0 and 0 <= eta <= 1")
    return RHO_WATER * GRAVITY * flow * head * eta / 1e6


def gate_to_flow(gate: float, head: float, full_gate_flow_coeff: float = 1.0) -> float:
    """Orifice law of the nonlinear penstock model, all quantities per-unit."""
    if not 0 <= gate <= 1:
        raise ValueError(f"gate must lie in [0, 1], got {gate}")
    if head <= 0:
        raise ValueError(f"head must be > 0, got {head}")
    return full_gate_flow_coeff * gate * math.sqrt(head)


def flow_fraction_at_power(unit: TurbineUnit, power_mw: float, head: float) -> float:
    """Per-unit flow drawn when delivering ``power_mw`` at ``head`` (metres).

    Flow is taken proportional to power between zero and the full-gate flow
    at this head, so full derated power corresponds to full gate.
    """
    h_hat = head / unit.rated_head
    p_avail = derate_max_power(unit.rated_power, head, unit.rated_head)
    if p_avail <= 0:
        return 0.0
    return power_mw / p_avail * unit.full_gate_flow_coeff * math.sqrt(h_hat)


def unit_efficiency_at_power(unit: TurbineUnit, power_mw: float, head: float) -> float:
    if power_mw <= 0:
        return 0.0
    return efficiency(unit, flow_fraction_at_power(unit, power_mw, head), head / unit.rated_head)
