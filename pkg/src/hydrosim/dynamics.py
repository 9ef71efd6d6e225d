"""Single-bus frequency dynamics with hydro turbine-governors.

The turbine is the nonlinear penstock model: flow ``q`` is the state, the
wicket gate ``G`` sets the orifice, head follows from ``h = (q / G)**2`` and
water accelerates as ``dq/dt = (h_static - h) / Tw`` where ``h_static`` is
the reservoir head the unit was initialised at. Power is
``Pm = At * h * (q - qnl)``. All of these are per-unit on the unit's own
ratings, with head relative to rated head.

A head-blind linearised comparator implements the classical water-column
transfer function ``(1 - Tw s) / (1 + Tw s / 2)`` around the initial gate.

The governor is a temporary-droop (dashpot) design: dead zone on the
frequency deviation, permanent droop ``Rp``, transient droop ``Rt`` with
reset time ``Tr``, a first-order gate servo ``Tg`` with rate and position
limits. Everything is integrated with fixed-step RK4.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from hydrosim.errors import InfeasibleInit, NumericalDivergence
from hydrosim.hydro_physics import TurbineUnit, derate_max_power

log = logging.getLogger(__name__)

F_NOMINAL = 60.0
_GATE_TOL = 1e-9


@dataclass
class GovernorParams:
    permanent_droop_Rp: float = 0.05
    temporary_droop_Rt: float = 0.4
    reset_time_Tr: float = 6.0
    servo_time_Tg: float = 0.2
    gate_rate_limit: float = 0.1
    gate_close_rate_limit: float | None = None
    deadband: float = 0.036
    gate_min: float = 0.0
    gate_max: float = 1.0

    def __post_init__(self):
        if self.gate_close_rate_limit is None:
            self.gate_close_rate_limit = self.gate_rate_limit
        checks = [
            (self.permanent_droop_Rp > 0, "Rp must be > 0"),
            (self.temporary_droop_Rt > 0, "Rt must be > 0"),
            (self.reset_time_Tr > 0, "Tr must be > 0"),
            (self.servo_time_Tg > 0, "Tg must be > 0"),
            (self.gate_rate_limit > 0 and self.gate_close_rate_limit > 0, "gate rate limits must be > 0"),
            (self.deadband >= 0, "deadband must be >= 0"),
            (0 <= self.gate_min < self.gate_max <= 1, "require 0 <= gate_min < gate_max <= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(f"governor: {msg}")


@dataclass(frozen=True)
class TurbineState:
    flow_q: float
    gate_G: float
    head_h: float
    mech_power_Pm: float
    head_static: float = 1.0


def dead_zone(x: float, width: float) -> float:
    if x > width:
        return x - width
    if x < -width:
        return x + width
    return 0.0


def init_steady_state(unit: TurbineUnit, governor: GovernorParams, P0: float, h0: float) -> TurbineState:
    """Steady operating point delivering ``P0`` at reservoir head ``h0``.

    ``At`` is held fixed and the static head carries the water condition.
    """
    if h0 <= 0:
        raise InfeasibleInit(f"unit {unit.unit_id!r}: h0 must be > 0")
    if P0 < 0:
        raise InfeasibleInit(f"unit {unit.unit_id!r}: P0 must be >= 0")
    at, qnl, k = unit.turbine_gain_At, unit.no_load_flow_qnl, unit.full_gate_flow_coeff
    q0 = P0 / (at * h0) + qnl
    g0 = q0 / (k * math.sqrt(h0))
    if g0 > governor.gate_max + 1e-12:
        raise InfeasibleInit(
            f"unit {unit.unit_id!r}: P0={P0:.4g} pu at h0={h0:.4g} needs gate {g0:.4f} > gate_max {governor.gate_max}"
        )
    if g0 < governor.gate_min:
        raise InfeasibleInit(f"unit {unit.unit_id!r}: gate {g0:.4f} below gate_min {governor.gate_min}")
    return TurbineState(q0, g0, h0, P0, h0)


def _turbine_head(q: float, gate: float, k: float) -> float:
    if gate <= 0:
        raise NumericalDivergence("gate closed to zero; penstock head is unbounded")
    return (q / (k * gate)) ** 2


def step_nonlinear_turbine(unit: TurbineUnit, state: TurbineState, gate_command: float, dt: float) -> TurbineState:
    """Advance the penstock one RK4 step with the gate held at ``gate_command``."""
    tw = unit.water_time_constant_Tw
    if dt <= 0 or dt > tw / 10 + 1e-15:
        raise ValueError(f"dt must lie in (0, Tw/10] = (0, {tw / 10:g}]")
    k, hs = unit.full_gate_flow_coeff, state.head_static

    def f(q):
        return (hs - _turbine_head(q, gate_command, k)) / tw

    q = state.flow_q
    k1 = f(q)
    k2 = f(q + 0.5 * dt * k1)
    k3 = f(q + 0.5 * dt * k2)
    k4 = f(q + dt * k3)
    q = q + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    h = _turbine_head(q, gate_command, k)
    if not (0 < q < 10 and 0 < h < 10):
        raise NumericalDivergence(f"unit {unit.unit_id!r}: q={q:.4g}, h={h:.4g} left (0, 10)")
    pm = unit.turbine_gain_At * h * (q - unit.no_load_flow_qnl)
    return TurbineState(q, gate_command, h, pm, hs)


@dataclass(frozen=True)
class LinearTurbineState:
    """Head-blind comparator: ``x`` is the lag state of the transfer
    function, ``gate0``/``p0`` the linearisation point."""

    gate0: float
    p0: float
    x: float = 0.0
    pm: float = 0.0


def init_linearized(unit: TurbineUnit, P0: float) -> LinearTurbineState:
    # head pinned at 1 p.u.
    g0 = P0 / unit.turbine_gain_At + unit.no_load_flow_qnl
    return LinearTurbineState(g0, P0, 0.0, P0)


def linearized_output(unit: TurbineUnit, state: LinearTurbineState, gate: float) -> float:
    return state.p0 + unit.turbine_gain_At * (-2.0 * (gate - state.gate0) + state.x)


def step_linearized_turbine(
    unit: TurbineUnit, state: LinearTurbineState, gate_command: float, dt: float
) -> LinearTurbineState:
    tw = unit.water_time_constant_Tw
    if dt <= 0 or dt > tw / 10 + 1e-15:
        raise ValueError(f"dt must lie in (0, Tw/10] = (0, {tw / 10:g}]")
    dg = gate_command - state.gate0
    a = 2.0 / tw
    # exact for a gate held over the step; equals RK4 to O(dt^5)
    x = 3.0 * dg + (state.x - 3.0 * dg) * math.exp(-a * dt)
    new = LinearTurbineState(state.gate0, state.p0, x, 0.0)
    return LinearTurbineState(state.gate0, state.p0, x, linearized_output(unit, new, gate_command))


def _governor_rates(p: GovernorParams, c0: float, xi: float, gate: float, w_eff: float):
    rp, rt = p.permanent_droop_Rp, p.temporary_droop_Rt
    dc = (xi - w_eff / rt) / (1.0 + rp / rt)
    c = c0 + dc
    clamped = 0
    if c > p.gate_max:
        c, clamped = p.gate_max, 1
    elif c < p.gate_min:
        c, clamped = p.gate_min, -1
    e = -w_eff - rp * (c - c0)
    dxi = e / (rt * p.reset_time_Tr)
    if (clamped > 0 and dxi > 0) or (clamped < 0 and dxi < 0):
        dxi = 0.0
    dg = (c - gate) / p.servo_time_Tg
    dg = min(max(dg, -p.gate_close_rate_limit), p.gate_rate_limit)
    if (gate >= p.gate_max and dg > 0) or (gate <= p.gate_min and dg < 0):
        dg = 0.0
    return dxi, dg


class Governor:
    """Temporary-droop hydro governor holding its own integrator and gate state."""

    def __init__(self, params: GovernorParams, gate0: float, f_nominal: float = F_NOMINAL):
        self.params = params
        self.f_nominal = f_nominal
        self.gate_ref = gate0
        self.gate = gate0
        self.xi = 0.0

    def step(self, freq_dev: float, dt: float) -> float:
        """Advance one RK4 step with ``freq_dev`` (Hz) held; returns the gate."""
        if dt <= 0:
            raise ValueError("dt must be > 0")
        p = self.params
        w_eff = dead_zone(freq_dev, p.deadband) / self.f_nominal

        def f(xi, g):
            return _governor_rates(p, self.gate_ref, xi, g, w_eff)

        xi, g = self.xi, self.gate
        a1, b1 = f(xi, g)
        a2, b2 = f(xi + 0.5 * dt * a1, g + 0.5 * dt * b1)
        a3, b3 = f(xi + 0.5 * dt * a2, g + 0.5 * dt * b2)
        a4, b4 = f(xi + dt * a3, g + dt * b3)
        self.xi = xi + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
        self.gate = min(max(g + dt / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4), p.gate_min), p.gate_max)
        return self.gate


def governor_step(freq_dev: float, governor: Governor, dt: float) -> float:
    return governor.step(freq_dev, dt)


@dataclass
class ResponsiveUnit:
    """A governor-responsive unit online in the grid model; ``count``
    identical copies share one set of states."""

    unit: TurbineUnit
    governor: GovernorParams
    P0: float
    h0: float = 1.0
    count: int = 1


@dataclass(frozen=True)
class UFLSStage:
    threshold_hz: float
    shed_fraction: float


@dataclass
class GridModel:
    system_base: float
    responsive_units: list[ResponsiveUnit]
    nonresponsive_mw: float = 0.0
    load_damping_D: float = 1.0
    ufls_stages: list[UFLSStage] = field(default_factory=list)
    f_nominal: float = F_NOMINAL
    nonresponsive_H: float = 0.0
    nonresponsive_mva: float = 0.0

    def __post_init__(self):
        self.ufls_stages = [s if isinstance(s, UFLSStage) else UFLSStage(*s) for s in self.ufls_stages]
        if self.system_base <= 0:
            raise ValueError("system_base must be > 0")
        if self.load_damping_D < 0:
            raise ValueError("load damping D must be >= 0")
        th = [s.threshold_hz for s in self.ufls_stages]
        if any(b >= a for a, b in zip(th, th[1:])):
            raise ValueError("UFLS thresholds must be strictly decreasing")
        if any(not 0 <= s.shed_fraction <= 1 for s in self.ufls_stages):
            raise ValueError("UFLS shed fractions must lie in [0, 1]")

    @property
    def stored_energy(self) -> float:
        """MW*s of rotating energy online, hydro plus the configured
        non-responsive fleet."""
        hydro = sum(r.count * r.unit.inertia_H * r.unit.mva_rating for r in self.responsive_units)
        return hydro + self.nonresponsive_H * self.nonresponsive_mva

    @property
    def h_aggregate(self) -> float:
        return self.stored_energy / self.system_base

    @property
    def initial_generation_mw(self) -> float:
        return sum(r.count * r.P0 * r.unit.mva_rating for r in self.responsive_units) + self.nonresponsive_mw


def aggregate_stored_energy(units: Sequence[tuple[TurbineUnit, bool]]) -> float:
    return sum(u.inertia_H * u.mva_rating for u, online in units if online)


@dataclass(frozen=True)
class LossEvent:
    delta_p_mw: float
    t0: float = 1.0


class TurbineModel(str, Enum):
    NONLINEAR = "nonlinear"
    LINEARIZED = "linearized"


@dataclass
class RoughZoneOverlay:
    perturbation_mw: np.ndarray
    frequency_hz: float
    amplitude_mw: float
    active: bool


def in_forbidden_band(unit: TurbineUnit, power_mw: float, p_available: float | None = None) -> bool:
    p_hat = unit.rated_power if p_available is None else p_available
    if p_hat <= 0:
        return False
    frac = power_mw / p_hat
    return any(lo < frac < hi for lo, hi in unit.forbidden_bands)


def inject_rough_zone_oscillation(
    unit: TurbineUnit,
    power_mw,
    t,
    shaft_speed: float | None = None,
    amplitude_frac: float = 0.05,
    p_available: float | None = None,
) -> RoughZoneOverlay:
    """Vortex-rope power swing signature: a sinusoid at a quarter of shaft
    speed, present only while the unit sits inside a forbidden band.

    ``power_mw`` is a scalar or a series aligned with ``t``. This is a
    diagnostic overlay, not a hydraulic model of the vortex.
    """
    if amplitude_frac < 0.05:
        raise ValueError("rough-zone swing amplitude is at least 5% of rating")
    t = np.asarray(t, dtype=float)
    speed = unit.shaft_speed if shaft_speed is None else shaft_speed
    freq = speed / 4.0
    amp = amplitude_frac * unit.rated_power
    power = np.broadcast_to(np.asarray(power_mw, dtype=float), t.shape)
    inside = np.array([in_forbidden_band(unit, p, p_available) for p in power], dtype=bool)
    pert = np.where(inside, amp * np.sin(2 * np.pi * freq * t), 0.0)
    return RoughZoneOverlay(pert, freq, amp, bool(inside.any()))


@dataclass
class FrequencySimResult:
    time: np.ndarray
    frequency: np.ndarray
    gate: np.ndarray
    flow: np.ndarray
    head: np.ndarray
    pm: np.ndarray
    unit_labels: list[str]
    f_nominal: float
    rocof: float
    nadir: float
    nadir_time: float
    settling_deviation: float
    analytic_settling_deviation: float
    response_mw: float
    gate_saturation_time: float | None
    shed_fraction: float
    frequency_collapse: bool
    rough_zone_units: list[str] = field(default_factory=list)

    def metrics(self) -> dict[str, float | bool | None]:
        return {
            "rocof_hz_per_s": self.rocof,
            "nadir_hz": self.nadir,
            "nadir_time_s": self.nadir_time,
            "settling_deviation_hz": self.settling_deviation,
            "analytic_settling_deviation_hz": self.analytic_settling_deviation,
            "response_mw": self.response_mw,
            "gate_saturation_time_s": self.gate_saturation_time,
            "shed_fraction": self.shed_fraction,
            "frequency_collapse": self.frequency_collapse,
        }


def _incremental_gains(grid: GridModel, model: TurbineModel) -> list[float]:
    """Steady-state MW-per-pu-frequency of each unit group, on system base."""
    gains = []
    for r in grid.responsive_units:
        u = r.unit
        slope = u.turbine_gain_At * u.full_gate_flow_coeff
        if model is TurbineModel.NONLINEAR:
            slope *= r.h0 ** 1.5
        gains.append(r.count * u.mva_rating / grid.system_base * slope / r.governor.permanent_droop_Rp)
    return gains


def droop_equilibrium(grid: GridModel, delta_p_mw: float, model: TurbineModel = TurbineModel.NONLINEAR) -> float:
    """Analytic settling frequency deviation (Hz) for a net generation
    deficit of ``delta_p_mw`` when no gate, rate or UFLS limit binds.

    Solves ``sum K_i * deadzone(w, db_i) + D * w + dP = 0``; with zero dead
    bands this is ``-dP / (sum K_i + D)``.
    """
    dp = delta_p_mw / grid.system_base
    if dp == 0:
        return 0.0
    gains = _incremental_gains(grid, model)
    dbs = [r.governor.deadband / grid.f_nominal for r in grid.responsive_units]
    d = grid.load_damping_D

    def balance(w):
        return sum(k * dead_zone(w, db) for k, db in zip(gains, dbs)) + d * w + dp

    if d == 0 and not any(gains):
        return math.nan
    span = abs(dp) / max(d + sum(gains), 1e-12) + max(dbs, default=0.0) + 1.0
    return brentq(balance, -span, span, xtol=1e-15, rtol=1e-14) * grid.f_nominal


def simulate_event(
    grid: GridModel,
    event: LossEvent,
    duration: float = 60.0,
    dt: float = 0.01,
    turbine_model: TurbineModel | str = TurbineModel.NONLINEAR,
    rough_zone: bool = False,
    rough_zone_amplitude: float = 0.05,
) -> FrequencySimResult:
    """Integrate the single-bus swing equation with every responsive unit
    after a step loss of ``event.delta_p_mw`` at ``event.t0``.

    ``2 H dw/dt = sum(Pm) + P_nonresponsive - P_load - D w`` on the system
    base, with ``H`` the aggregate inertia of online units. UFLS stages
    latch at the end of the step in which frequency first dips below
    their threshold.
    """
    model = TurbineModel(turbine_model)
    units = grid.responsive_units
    n = len(units)
    if dt <= 0 or dt > 0.02 + 1e-15:
        raise ValueError("dt must lie in (0, 0.02] s")
    if n and dt > min(r.unit.water_time_constant_Tw for r in units) / 10 + 1e-15:
        raise ValueError("dt must not exceed min(Tw)/10")
    h2 = 2.0 * grid.h_aggregate
    if h2 <= 0:
        raise ValueError("no inertia online")
    base, fnom, d = grid.system_base, grid.f_nominal, grid.load_damping_D
    nonlinear = model is TurbineModel.NONLINEAR

    # per-group constants
    at, qnl, tw, kf, hs, wt, p0s, g0s = [], [], [], [], [], [], [], []
    gov, db, p_avail = [], [], []
    y = [0.0]
    for r in units:
        u = r.unit
        if nonlinear:
            st = init_steady_state(u, r.governor, r.P0, r.h0)
            a0 = st.flow_q
        else:
            lst = init_linearized(u, r.P0)
            if not r.governor.gate_min <= lst.gate0 <= r.governor.gate_max:
                raise InfeasibleInit(f"unit {u.unit_id!r}: linearised init gate {lst.gate0:.4f} outside limits")
            st = TurbineState(lst.gate0, lst.gate0, 1.0, r.P0, 1.0)
            a0 = 0.0
        y.extend([a0, st.gate_G, 0.0])
        at.append(u.turbine_gain_At)
        qnl.append(u.no_load_flow_qnl)
        tw.append(u.water_time_constant_Tw)
        kf.append(u.full_gate_flow_coeff)
        hs.append(r.h0)
        wt.append(r.count * u.mva_rating / base)
        p0s.append(r.P0)
        g0s.append(st.gate_G)
        gov.append(r.governor)
        db.append(r.governor.deadband / fnom)
        p_avail.append(derate_max_power(u.rated_power, r.h0 * u.rated_head, u.rated_head))

    load0 = grid.initial_generation_mw / base
    p_nr = grid.nonresponsive_mw / base
    loss = event.delta_p_mw / base
    shed = 0.0
    rz_amp = [rough_zone_amplitude * r.unit.rated_power / base * r.count for r in units]
    rz_freq = [r.unit.shaft_speed / 4.0 for r in units]

    def unit_pm(i, a, g):
        if nonlinear:
            h = (a / (kf[i] * g)) ** 2
            return at[i] * h * (a - qnl[i]), h
        return p0s[i] + at[i] * (-2.0 * (g - g0s[i]) + a), 1.0

    def derivs(t, y):
        w = y[0]
        gen = p_nr
        out = [0.0] * len(y)
        for i in range(n):
            j = 1 + 3 * i
            a, g, xi = y[j], y[j + 1], y[j + 2]
            if g <= 0:
                raise NumericalDivergence("gate closed to zero during simulation")
            pm, h = unit_pm(i, a, g)
            gen += wt[i] * pm
            if rough_zone and in_forbidden_band(units[i].unit, pm * units[i].unit.mva_rating, p_avail[i]):
                gen += rz_amp[i] * math.sin(2 * math.pi * rz_freq[i] * t)
            w_eff = dead_zone(w, db[i])
            dxi, dg = _governor_rates(gov[i], g0s[i], xi, g, w_eff)
            if nonlinear:
                da = (hs[i] - h) / tw[i]
            else:
                da = (3.0 * (g - g0s[i]) - a) / (0.5 * tw[i])
            out[j], out[j + 1], out[j + 2] = da, dg, dxi
        load = load0 * (1.0 - shed) + (loss if t >= event.t0 - 1e-12 else 0.0)
        out[0] = (gen - load - d * w) / h2
        return out

    steps = int(round(duration / dt))

    time = np.arange(steps + 1) * dt
    freq = np.empty(steps + 1)
    gate = np.empty((steps + 1, n))
    flow = np.empty((steps + 1, n))
    head = np.empty((steps + 1, n))
    pm_s = np.empty((steps + 1, n))
    tripped = [False] * len(grid.ufls_stages)
    rz_units = set()

    def record(k, y):
        freq[k] = fnom * (1.0 + y[0])
        for i in range(n):
            j = 1 + 3 * i
            a, g = y[j], y[j + 1]
            pm, h = unit_pm(i, a, g)
            gate[k, i] = g
            head[k, i] = h
            flow[k, i] = a if nonlinear else kf[i] * g
            pm_s[k, i] = pm
            if rough_zone and in_forbidden_band(units[i].unit, pm * units[i].unit.mva_rating, p_avail[i]):
                rz_units.add(units[i].unit.unit_id)
            if nonlinear and not (0 < a < 10 and 0 < h < 10):
                raise NumericalDivergence(f"unit {units[i].unit.unit_id!r}: q={a:.4g}, h={h:.4g} at t={k * dt:.3f}s")

    record(0, y)
    gmin = [p.gate_min for p in gov]
    gmax = [p.gate_max for p in gov]
    size = len(y)
    for k in range(steps):
        t = k * dt
        k1 = derivs(t, y)
        y2 = [y[m] + 0.5 * dt * k1[m] for m in range(size)]
        k2 = derivs(t + 0.5 * dt, y2)
        y3 = [y[m] + 0.5 * dt * k2[m] for m in range(size)]
        k3 = derivs(t + 0.5 * dt, y3)
        y4 = [y[m] + dt * k3[m] for m in range(size)]
        k4 = derivs(t + dt, y4)
        y = [y[m] + dt / 6.0 * (k1[m] + 2 * k2[m] + 2 * k3[m] + k4[m]) for m in range(size)]
        for i in range(n):
            j = 2 + 3 * i
            y[j] = min(max(y[j], gmin[i]), gmax[i])
        f_now = fnom * (1.0 + y[0])
        for s, stage in enumerate(grid.ufls_stages):
            if not tripped[s] and f_now < stage.threshold_hz:
                tripped[s] = True
                shed += stage.shed_fraction
                log.info("UFLS stage %d at %.3f Hz: shed %.1f%% of load", s, stage.threshold_hz,
                         100 * stage.shed_fraction)
        shed = min(shed, 1.0)
        record(k + 1, y)

    i0 = int(round(event.t0 / dt))
    i0 = min(max(i0, 0), steps)
    i1 = min(i0 + int(round(0.5 / dt)), steps)
    rocof = (freq[i1] - freq[i0]) / ((i1 - i0) * dt) if i1 > i0 else 0.0
    kmin = int(np.argmin(freq))
    weights_mw = np.array([r.count * r.unit.mva_rating for r in units])
    response = float(((pm_s[-1] - pm_s[0]) * weights_mw).sum()) if n else 0.0
    sat_time = None
    if n:
        at_max = gate >= (np.array(gmax) - _GATE_TOL)
        hit = np.flatnonzero(at_max.any(axis=1))
        if hit.size:
            sat_time = float(time[hit[0]])
    if grid.ufls_stages:
        floor = grid.ufls_stages[-1].threshold_hz - 1.0
    else:
        floor = 0.9 * fnom
    collapse = bool(freq.min() < floor)
    net_loss = event.delta_p_mw - shed * grid.initial_generation_mw

    return FrequencySimResult(
        time=time, frequency=freq, gate=gate, flow=flow, head=head, pm=pm_s,
        unit_labels=[r.unit.unit_id for r in units], f_nominal=fnom,
        rocof=float(rocof), nadir=float(freq[kmin]), nadir_time=float(time[kmin]),
        settling_deviation=float(freq[-1] - fnom),
        analytic_settling_deviation=droop_equilibrium(grid, net_loss, model),
        response_mw=response, gate_saturation_time=sat_time, shed_fraction=shed,
        frequency_collapse=collapse, rough_zone_units=sorted(rz_units),
    )


def swing_imbalance(grid: GridModel, pm: Sequence[float], w: float, load_mw: float) -> float:
    """Accelerating power on system base: ``sum(Pm) + P_nr - P_load - D w``."""
    gen = sum(r.count * p * r.unit.mva_rating for r, p in zip(grid.responsive_units, pm)) + grid.nonresponsive_mw
    return (gen - load_mw) / grid.system_base - grid.load_damping_D * w
