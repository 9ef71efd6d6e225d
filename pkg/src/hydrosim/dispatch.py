"""Rough-zone-aware unit commitment and load allocation.

Each committed unit must sit inside one of its allowed intervals: the
cavitation-safe load range with the forbidden (rough-zone) bands cut out,
everything scaled by the head-derated maximum power. Within a plant the
search is exhaustive over commitments and exact on the ``resolution_mw``
grid, using a dynamic programme over discretised unit outputs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from hydrosim.errors import UnservedTarget
from hydrosim.hydro_physics import TurbineUnit, derate_max_power, unit_efficiency_at_power
from hydrosim.river_network import BasinNode

log = logging.getLogger(__name__)

_EPS = 1e-9


def feasible_ranges(unit: TurbineUnit, head: float) -> list[tuple[float, float]]:
    """Allowed MW intervals for ``unit`` at ``head`` (metres), sorted and disjoint."""
    if head < 0:
        raise ValueError("head must be >= 0")
    p_hat = derate_max_power(unit.rated_power, head, unit.rated_head)
    if p_hat <= 0:
        return []
    # rounding keeps band edges such as 0.6 * 100 from landing a hair above 60
    lo, hi = round(unit.min_load_frac * p_hat, 9), round(unit.max_load_frac * p_hat, 9)
    ranges = []
    cursor = lo
    for b_lo, b_hi in unit.forbidden_bands:
        b_lo, b_hi = round(b_lo * p_hat, 9), round(b_hi * p_hat, 9)
        if b_lo >= cursor:
            ranges.append((cursor, b_lo))
        cursor = max(cursor, b_hi)
    if cursor <= hi:
        ranges.append((cursor, hi))
    return ranges


def grid_points(ranges: Sequence[tuple[float, float]], resolution_mw: float) -> list[int]:
    """Positive grid indices k with k * resolution inside an allowed interval."""
    ks = set()
    for lo, hi in ranges:
        k_lo = max(1, math.ceil(lo / resolution_mw - _EPS))
        k_hi = math.floor(hi / resolution_mw + _EPS)
        for k in range(k_lo, k_hi + 1):
            if lo - _EPS <= k * resolution_mw <= hi + _EPS:
                ks.add(k)
    return sorted(ks)


@dataclass
class PlantDispatchProblem:
    units: list[TurbineUnit]
    head: float
    target_mw: float
    resolution_mw: float = 0.5

    def __post_init__(self):
        if not self.units:
            raise ValueError("a plant dispatch problem needs at least one unit")
        if self.target_mw < 0:
            raise ValueError("target_mw must be >= 0")
        if self.resolution_mw <= 0:
            raise ValueError("resolution_mw must be > 0")


@dataclass
class DispatchSolution:
    unit_ids: list[str]
    committed: list[bool]
    setpoints: list[float]
    total_mw: float
    plant_efficiency: float
    feasible: bool
    target_mw: float = 0.0

    @property
    def n_committed(self) -> int:
        return sum(self.committed)


def dispatch_plant(problem: PlantDispatchProblem) -> DispatchSolution:
    """Most efficient grid dispatch whose total is as close as possible to
    the target.

    Candidate totals are the reachable grid sums nearest the target. Among
    them the power-weighted plant efficiency is maximised; ties go to fewer
    committed units, then to the lexicographically smallest set of unit ids.
    ``feasible`` is false when the nearest reachable total misses the target
    by more than one resolution step.
    """
    res = problem.resolution_mw
    units = problem.units
    n = len(units)
    order = sorted(range(n), key=lambda i: units[i].unit_id)
    rank_bit = {idx: 1 << (n - 1 - r) for r, idx in enumerate(order)}

    grids = []
    for idx in order:
        u = units[idx]
        ks = grid_points(feasible_ranges(u, problem.head), res)
        vals = [(k * res) * unit_efficiency_at_power(u, k * res, problem.head) for k in ks]
        grids.append((ks, vals))

    size = sum(ks[-1] for ks, _ in grids if ks) + 1
    val = np.full(size, -np.inf)
    cnt = np.zeros(size, dtype=np.int64)
    mask = np.zeros(size, dtype=np.int64)
    val[0] = 0.0
    choice = np.zeros((n, size), dtype=np.int64)

    for pos, (ks, vals) in enumerate(grids):
        bit = rank_bit[order[pos]]
        new_val, new_cnt, new_mask = val.copy(), cnt.copy(), mask.copy()
        pick = choice[pos]
        for k, v in zip(ks, vals):
            c_val = np.full(size, -np.inf)
            c_val[k:] = val[:-k] + v
            c_cnt = np.zeros(size, dtype=np.int64)
            c_cnt[k:] = cnt[:-k] + 1
            c_mask = np.zeros(size, dtype=np.int64)
            c_mask[k:] = mask[:-k] | bit
            eq_val = c_val == new_val
            better = (c_val > new_val) | (
                eq_val & np.isfinite(c_val) & ((c_cnt < new_cnt) | ((c_cnt == new_cnt) & (c_mask > new_mask)))
            )
            if better.any():
                new_val[better] = c_val[better]
                new_cnt[better] = c_cnt[better]
                new_mask[better] = c_mask[better]
                pick[better] = k
        val, cnt, mask = new_val, new_cnt, new_mask

    reachable = np.flatnonzero(np.isfinite(val))
    totals = reachable * res
    dist = np.abs(totals - problem.target_mw)
    nearest = dist.min()
    cands = reachable[dist <= nearest + _EPS]
    best = None
    for s in cands:
        eff = val[s] / (s * res) if s > 0 else 0.0
        key = (eff, -cnt[s], mask[s])
        if best is None or key > best[0]:
            best = (key, s)
    s = best[1]

    ks = [0] * n
    for pos in range(n - 1, -1, -1):
        k = int(choice[pos, s])
        ks[order[pos]] = k
        s -= k
    setpoints = [k * res for k in ks]
    total_k = sum(ks)
    total = total_k * res
    eff = float(val[total_k] / total) if total_k > 0 else 0.0
    return DispatchSolution(
        unit_ids=[u.unit_id for u in units],
        committed=[k > 0 for k in ks],
        setpoints=setpoints,
        total_mw=total,
        plant_efficiency=eff,
        feasible=bool(nearest <= res + _EPS),
        target_mw=problem.target_mw,
    )


def plant_capacity(units: Sequence[TurbineUnit], head: float) -> float:
    return sum(derate_max_power(u.rated_power, head, u.rated_head) for u in units)


@dataclass
class FleetDispatch:
    plant_ids: list[str]
    allocations: dict[str, float]
    solutions: dict[str, DispatchSolution]
    system_target: float
    unserved_mw: float = 0.0

    @property
    def total_mw(self) -> float:
        return sum(s.total_mw for s in self.solutions.values())


def fleet_dispatch(
    plants: Sequence[tuple[BasinNode, float]],
    system_target: float,
    resolution_mw: float = 0.5,
    strict: bool = True,
) -> FleetDispatch:
    """Split ``system_target`` across plants in proportion to derated
    capacity, dispatch each plant, then hand any shortfall once to plants
    with headroom. Raises :class:`UnservedTarget` when MW remain unserved
    and ``strict`` is set; the partial result rides on the exception."""
    if system_target < 0:
        raise ValueError("system_target must be >= 0")
    ids = [node.node_id for node, _ in plants]
    caps = {node.node_id: plant_capacity(node.plant, head) for node, head in plants}
    heads = {node.node_id: head for node, head in plants}
    units = {node.node_id: node.plant for node, _ in plants}
    total_cap = sum(caps.values())
    if total_cap > 0:
        alloc = {pid: system_target * caps[pid] / total_cap for pid in ids}
    else:
        alloc = {pid: 0.0 for pid in ids}

    def solve(pid):
        return dispatch_plant(PlantDispatchProblem(units[pid], heads[pid], alloc[pid], resolution_mw))

    sols = {pid: solve(pid) for pid in ids}
    residual = system_target - sum(s.total_mw for s in sols.values())
    if residual > resolution_mw + _EPS:
        headroom = {pid: caps[pid] - sols[pid].total_mw for pid in ids if caps[pid] - sols[pid].total_mw > _EPS}
        room = sum(headroom.values())
        if room > 0:
            for pid, h in headroom.items():
                alloc[pid] += min(h, residual * h / room)
                sols[pid] = solve(pid)
            log.debug("reallocated %.6g MW to %d plants with headroom", residual, len(headroom))

    served = sum(s.total_mw for s in sols.values())
    shortfall = system_target - served
    unserved = shortfall if shortfall > resolution_mw + _EPS else 0.0
    result = FleetDispatch(ids, alloc, sols, system_target, unserved)
    if unserved and strict:
        raise UnservedTarget(unserved, result)
    return result
