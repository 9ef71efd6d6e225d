"""Independent reference computations used by the test-suite.

Nothing here imports the code under test except where a test needs the
same per-unit efficiency curve to compare a search result exactly.
"""

from __future__ import annotations

import math

import numpy as np

RHO, G = 1000.0, 9.81


def derate(head, rated_head):
    return (head / rated_head) ** 1.5


def hydraulic_mw(flow_m3s, head_m, eta):
    return RHO * G * flow_m3s * head_m * eta / 1e6


def droop_settling_hz(delta_p_pu, inv_rp_weighted, damping, f_nominal=60.0):
    """Steady frequency deviation once every dashpot has reset."""
    return -delta_p_pu / (inv_rp_weighted + damping) * f_nominal


def initial_rocof_hz(delta_p_pu, h_aggregate, f_nominal=60.0):
    return -delta_p_pu / (2.0 * h_aggregate) * f_nominal


def lag_then_reservoir(storage0, inflow, release, dt):
    """Explicit mass balance of one reservoir with no spill."""
    s = [storage0]
    for qi, qr in zip(inflow, release):
        s.append(s[-1] + (qi - qr) * dt)
    return s


def allowed_grid(p_hat, min_frac, max_frac, bands, res):
    """Grid MW values a unit may hold, by direct membership test."""
    if p_hat <= 0:
        return []
    tol = 1e-9
    out = []
    for k in range(1, int(math.floor(max_frac * p_hat / res + 1e-9)) + 1):
        p = k * res
        if p < min_frac * p_hat - tol or p > max_frac * p_hat + tol:
            continue
        if any(lo * p_hat + tol < p < hi * p_hat - tol for lo, hi in bands):
            continue
        out.append(p)
    return out


def brute_force_dispatch(units, head, target, res, eff_at_power):
    """Exhaustive enumeration of every on/off pattern and grid setpoint.

    Units are visited in unit-id order and the weighted sum of P*eta is
    accumulated in that same order. Returns (plant_efficiency, total_mw,
    setpoints by original index) or None when no unit can run.
    """
    order = sorted(range(len(units)), key=lambda i: units[i].unit_id)
    opts_p, opts_v = [], []
    for i in order:
        u = units[i]
        p_hat = u.rated_power * derate(head, u.rated_head)
        ps = allowed_grid(p_hat, u.min_load_frac, u.max_load_frac, u.forbidden_bands, res)
        opts_p.append(np.array([0.0] + ps))
        opts_v.append(np.array([0.0] + [p * eff_at_power(u, p, head) for p in ps]))

    n = len(units)
    shape = [len(p) for p in opts_p]
    total = np.zeros(shape)
    val = np.zeros(shape)
    cnt = np.zeros(shape, dtype=int)
    for d in range(n):
        view = [1] * n
        view[d] = shape[d]
        total = total + opts_p[d].reshape(view)
        val = val + opts_v[d].reshape(view)
        cnt = cnt + (opts_p[d] > 0).astype(int).reshape(view)

    dist = np.abs(total - target)
    near = dist <= dist.min() + 1e-9
    with np.errstate(invalid="ignore", divide="ignore"):
        eff = np.where(total > 0, val / np.where(total > 0, total, 1.0), 0.0)
    best_eff = eff[near].max()
    idx = np.argwhere(near & (eff == best_eff))
    # fewest units among the optimum, then the lexicographically smallest id set
    def key(ix):
        on = [order[d] for d in range(n) if ix[d] > 0]
        return (len(on), sorted(units[i].unit_id for i in on))
    pick = min((tuple(ix) for ix in idx), key=key)
    setpoints = [0.0] * n
    for d in range(n):
        setpoints[order[d]] = float(opts_p[d][pick[d]])
    return float(best_eff), float(total[pick]), setpoints
