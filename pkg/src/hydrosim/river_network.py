"""Cascaded river basins: topology, lag-and-mass-balance routing,
run-of-river coupling and environmental constraint checks.

Volumes are m3, flows m3/s, elevations and heads metres, time seconds.
Routing is pure translation: water leaving a node reaches the next node
``round(travel_time / dt)`` steps later, with no attenuation.
"""

from __future__ import annotations

import graphlib
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from hydrosim.errors import OutOfTable, StorageUnderflow, TopologyError
from hydrosim.hydro_physics import TurbineUnit, derate_max_power, efficiency, mechanical_power

_TABLE_TOL = 1e-9


class NodeKind(str, Enum):
    RESERVOIR = "Reservoir"
    RUN_OF_RIVER = "RunOfRiver"


@dataclass
class BasinNode:
    node_id: str
    kind: NodeKind
    tailwater_elevation: float
    storage_elevation_table: Sequence[tuple[float, float]] | None = None
    min_storage: float = 0.0
    max_storage: float = 0.0
    initial_storage: float | None = None
    forebay_elevation: float | None = None
    min_environmental_flow: float = 0.0
    min_generation: float = 0.0
    plant: list[TurbineUnit] = field(default_factory=list)

    def __post_init__(self):
        self.kind = NodeKind(self.kind)
        if self.kind is NodeKind.RESERVOIR:
            table = self.storage_elevation_table
            if not table or len(table) < 2:
                raise ValueError(f"reservoir {self.node_id!r} needs a storage_elevation_table with >= 2 rows")
            self.storage_elevation_table = tuple((float(s), float(e)) for s, e in table)
            pairs = self.storage_elevation_table
            for (s0, e0), (s1, e1) in zip(pairs, pairs[1:]):
                if not (s1 > s0 and e1 > e0):
                    raise ValueError(
                        f"reservoir {self.node_id!r}: storage_elevation_table must increase strictly in both columns"
                    )
            if not self.min_storage < self.max_storage:
                raise ValueError(f"reservoir {self.node_id!r}: require min_storage < max_storage")
            if self.initial_storage is None:
                self.initial_storage = self.max_storage
            if not self.min_storage <= self.initial_storage <= self.max_storage:
                raise ValueError(f"reservoir {self.node_id!r}: initial_storage outside [min_storage, max_storage]")
        else:
            if self.storage_elevation_table:
                raise ValueError(f"run-of-river node {self.node_id!r} cannot carry a storage table")
            if self.forebay_elevation is None:
                raise ValueError(f"run-of-river node {self.node_id!r} needs a forebay_elevation")
            self.min_storage = self.max_storage = 0.0
            self.initial_storage = 0.0
        if self.min_environmental_flow < 0 or self.min_generation < 0:
            raise ValueError(f"node {self.node_id!r}: minimum flow and generation must be >= 0")

    @property
    def max_turbine_flow(self) -> float:
        return sum(u.full_gate_flow_coeff * u.rated_flow for u in self.plant)


@dataclass(frozen=True)
class Reach:
    from_node: str
    to_node: str
    travel_time: float = 0.0

    def __post_init__(self):
        if self.travel_time < 0:
            raise ValueError(f"reach {self.from_node}->{self.to_node}: travel_time must be >= 0")


@dataclass
class BasinNetwork:
    nodes: list[BasinNode]
    reaches: list[Reach] = field(default_factory=list)

    def __post_init__(self):
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise TopologyError("duplicate node ids")
        known = set(ids)
        seen_from = set()
        for r in self.reaches:
            if r.from_node not in known or r.to_node not in known:
                raise TopologyError(f"reach {r.from_node}->{r.to_node} references an unknown node")
            if r.from_node in seen_from:
                raise TopologyError(f"node {r.from_node!r} has more than one downstream reach")
            seen_from.add(r.from_node)
        self.order()

    def node(self, node_id: str) -> BasinNode:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def order(self) -> list[str]:
        """Node ids upstream-first; ties keep declaration order."""
        ts = graphlib.TopologicalSorter({n.node_id: [] for n in self.nodes})
        for r in self.reaches:
            ts.add(r.to_node, r.from_node)
        try:
            ts.prepare()
        except graphlib.CycleError as exc:
            raise TopologyError(f"reach graph has a cycle: {exc.args[1]}") from None
        rank = {n.node_id: i for i, n in enumerate(self.nodes)}
        out = []
        while ts.is_active():
            ready = sorted(ts.get_ready(), key=rank.__getitem__)
            out.extend(ready)
            ts.done(*ready)
        return out

    def upstream_reaches(self, node_id: str) -> list[Reach]:
        return [r for r in self.reaches if r.to_node == node_id]

    def terminal_nodes(self) -> list[str]:
        has_out = {r.from_node for r in self.reaches}
        return [n.node_id for n in self.nodes if n.node_id not in has_out]


@dataclass
class BasinState:
    """Routing result. Per-step series have length ``horizon``; storage and
    head are sampled at step boundaries and have length ``horizon + 1``."""

    dt: float
    horizon: int
    storage: dict[str, np.ndarray]
    head: dict[str, np.ndarray]
    lateral_inflow: dict[str, np.ndarray]
    inflow: dict[str, np.ndarray]
    release: dict[str, np.ndarray]
    spill: dict[str, np.ndarray]
    in_transit_delivered: float = 0.0
    in_transit_remaining: float = 0.0

    def outflow(self, node_id: str) -> np.ndarray:
        return self.release[node_id] + self.spill[node_id]


def lag_steps(travel_time: float, dt: float) -> int:
    # round half up, independent of banker's rounding
    return int(math.floor(travel_time / dt + 0.5))


def head_from_storage(node: BasinNode, storage):
    """Forebay from the storage table minus tailwater. Accepts a scalar or
    an array of storages."""
    if node.kind is not NodeKind.RESERVOIR:
        raise ValueError(f"node {node.node_id!r} has no storage table")
    s = np.array([p[0] for p in node.storage_elevation_table])
    e = np.array([p[1] for p in node.storage_elevation_table])
    span = s[-1] - s[0]
    arr = np.asarray(storage, dtype=float)
    if np.any(arr < s[0] - _TABLE_TOL * span) or np.any(arr > s[-1] + _TABLE_TOL * span):
        bad = arr[(arr < s[0] - _TABLE_TOL * span) | (arr > s[-1] + _TABLE_TOL * span)].flat[0]
        raise OutOfTable(f"storage {bad:.6g} outside table span [{s[0]:.6g}, {s[-1]:.6g}] at {node.node_id!r}")
    head = np.interp(arr, s, e) - node.tailwater_elevation
    return float(head) if arr.ndim == 0 else head


def _series(values, horizon: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        return np.full(horizon, float(arr))
    if arr.shape != (horizon,):
        raise ValueError(f"{what}: expected {horizon} samples, got {arr.shape[0]}")
    return arr


def route_water(
    network: BasinNetwork,
    lateral_inflows: Mapping[str, Sequence[float] | float],
    releases: Mapping[str, Sequence[float] | float] | None = None,
    dt: float = 3600.0,
    horizon: int | None = None,
    in_transit: str | Mapping[tuple[str, str], Sequence[float]] = "steady",
) -> BasinState:
    """Route water down the cascade.

    ``releases`` is required for every reservoir; run-of-river nodes pass
    their inflow through the plant up to its maximum turbine flow and spill
    the rest. ``in_transit`` fills each reach before upstream water first
    arrives: ``"steady"`` repeats the upstream node's first inflow sample,
    ``"zero"`` starts the reaches empty, or a mapping ``(from, to) -> series``
    gives the profile explicitly.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    releases = releases or {}
    if horizon is None:
        lengths = [len(v) for v in lateral_inflows.values() if np.ndim(v) == 1]
        if not lengths:
            raise ValueError("horizon is required when every inflow is a scalar")
        horizon = lengths[0]
    order = network.order()

    lateral = {nid: _series(lateral_inflows.get(nid, 0.0), horizon, f"lateral inflow at {nid}") for nid in order}
    storage, head, inflow, release, spill = {}, {}, {}, {}, {}
    delivered = 0.0
    remaining = 0.0

    for nid in order:
        node = network.node(nid)
        total_in = lateral[nid].copy()
        for reach in network.upstream_reaches(nid):
            lag = lag_steps(reach.travel_time, dt)
            up_out = release[reach.from_node] + spill[reach.from_node]
            if lag == 0:
                total_in += up_out
                continue
            if isinstance(in_transit, str):
                if in_transit == "steady":
                    prefix = np.full(lag, inflow[reach.from_node][0])
                elif in_transit == "zero":
                    prefix = np.zeros(lag)
                else:
                    raise ValueError(f"unknown in_transit policy {in_transit!r}")
            else:
                prefix = _series(in_transit[(reach.from_node, nid)], lag, f"in-transit profile {reach.from_node}->{nid}")
            arriving = np.concatenate([prefix, up_out])
            total_in += arriving[:horizon]
            delivered += float(prefix[: min(lag, horizon)].sum()) * dt
            remaining += float(arriving[horizon:].sum() - prefix[horizon:].sum()) * dt
        inflow[nid] = total_in

        if node.kind is NodeKind.RUN_OF_RIVER:
            qmax = node.max_turbine_flow
            rel = np.minimum(total_in, qmax)
            release[nid] = rel
            spill[nid] = total_in - rel
            storage[nid] = np.zeros(horizon + 1)
            head[nid] = np.full(horizon + 1, node.forebay_elevation - node.tailwater_elevation)
            continue

        if nid not in releases:
            raise ValueError(f"reservoir {nid!r} needs a release series")
        rel = _series(releases[nid], horizon, f"release at {nid}")
        if np.any(rel < 0):
            raise ValueError(f"release at {nid!r} must be >= 0")
        s = np.empty(horizon + 1)
        sp = np.zeros(horizon)
        s[0] = node.initial_storage
        tol = 1e-12 * max(node.max_storage, 1.0)
        for t in range(horizon):
            trial = s[t] + (total_in[t] - rel[t]) * dt
            if trial < node.min_storage - tol:
                raise StorageUnderflow(nid, t, trial)
            if trial > node.max_storage:
                sp[t] = (trial - node.max_storage) / dt
                trial = node.max_storage
            s[t + 1] = trial
        storage[nid] = s
        release[nid] = rel.copy()
        spill[nid] = sp
        head[nid] = head_from_storage(node, np.clip(s, node.min_storage, node.max_storage))

    return BasinState(
        dt=dt, horizon=horizon, storage=storage, head=head, lateral_inflow=lateral,
        inflow=inflow, release=release, spill=spill,
        in_transit_delivered=delivered, in_transit_remaining=remaining,
    )


def water_balance(network: BasinNetwork, state: BasinState) -> dict[str, float]:
    """Volume bookkeeping over the whole horizon (m3).

    ``residual`` is zero up to round-off when routing conserves water.
    """
    dt = state.dt
    lateral = sum(float(v.sum()) for v in state.lateral_inflow.values()) * dt
    terminal = sum(float(state.outflow(n).sum()) for n in network.terminal_nodes()) * dt
    d_storage = sum(float(state.storage[n][-1] - state.storage[n][0]) for n in state.storage)
    inputs = lateral + state.in_transit_delivered
    outputs = terminal + d_storage + state.in_transit_remaining
    return {
        "lateral_inflow": lateral,
        "in_transit_delivered": state.in_transit_delivered,
        "terminal_outflow": terminal,
        "storage_change": d_storage,
        "in_transit_remaining": state.in_transit_remaining,
        "residual": inputs - outputs,
        "throughput": inputs,
    }


def plant_efficiency(node: BasinNode, flow: float, head: float) -> float:
    """Flow-weighted efficiency with ``flow`` shared across units in
    proportion to their full-gate flow."""
    qmax = node.max_turbine_flow
    if qmax <= 0 or flow <= 0 or head <= 0:
        return 0.0
    share = min(flow / qmax, 1.0)
    num = 0.0
    for u in node.plant:
        w = u.full_gate_flow_coeff * u.rated_flow
        num += w * efficiency(u, share * u.full_gate_flow_coeff, head / u.rated_head)
    return num / qmax


def available_capacity_series(network: BasinNetwork, state: BasinState) -> dict[str, np.ndarray]:
    out = {}
    for node in network.nodes:
        nid = node.node_id
        h = state.head[nid][: state.horizon]
        cap = np.array([sum(derate_max_power(u.rated_power, max(ht, 0.0), u.rated_head) for u in node.plant) for ht in h])
        if node.kind is NodeKind.RUN_OF_RIVER:
            water = np.array([
                mechanical_power(q, max(ht, 0.0), plant_efficiency(node, q, ht))
                for q, ht in zip(state.inflow[nid], h)
            ])
            cap = np.minimum(cap, water)
        out[nid] = cap
    return out


def generation_series(network: BasinNetwork, state: BasinState) -> dict[str, np.ndarray]:
    """Power from the turbined release, capped by available capacity. Spill
    generates nothing."""
    caps = available_capacity_series(network, state)
    out = {}
    for node in network.nodes:
        nid = node.node_id
        h = state.head[nid][: state.horizon]
        gen = np.array([
            mechanical_power(min(q, node.max_turbine_flow), max(ht, 0.0), plant_efficiency(node, q, ht))
            for q, ht in zip(state.release[nid], h)
        ])
        out[nid] = np.minimum(gen, caps[nid])
    return out


class ViolationKind(str, Enum):
    MIN_FLOW = "MinFlow"
    MIN_GENERATION = "MinGeneration"
    STORAGE_BOUND = "StorageBound"


@dataclass(frozen=True)
class Violation:
    node_id: str
    step: int
    kind: ViolationKind
    value: float
    limit: float


def check_constraints(
    network: BasinNetwork,
    state: BasinState,
    generation: Mapping[str, Sequence[float]] | None = None,
) -> list[Violation]:
    """Every (node, step, kind) where an environmental or storage limit is
    broken. ``generation`` defaults to :func:`generation_series`."""
    if generation is None:
        generation = generation_series(network, state)
    found = []
    for node in network.nodes:
        nid = node.node_id
        out = state.outflow(nid)
        gen = np.asarray(generation.get(nid, np.zeros(state.horizon)), dtype=float)
        for t in range(state.horizon):
            if out[t] < node.min_environmental_flow:
                found.append(Violation(nid, t, ViolationKind.MIN_FLOW, float(out[t]), node.min_environmental_flow))
            if gen[t] < node.min_generation:
                found.append(Violation(nid, t, ViolationKind.MIN_GENERATION, float(gen[t]), node.min_generation))
        if node.kind is NodeKind.RESERVOIR:
            tol = 1e-9 * node.max_storage
            for t, s in enumerate(state.storage[nid]):
                if s < node.min_storage - tol:
                    found.append(Violation(nid, t, ViolationKind.STORAGE_BOUND, float(s), node.min_storage))
                elif s > node.max_storage + tol:
                    found.append(Violation(nid, t, ViolationKind.STORAGE_BOUND, float(s), node.max_storage))
    return found
