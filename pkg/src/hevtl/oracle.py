"""Deterministic dynamic programming over a SOC x torque grid.

The driving cycle fixes speed and acceleration, so the only dynamic state is
SOC and the transition is deterministic. Values between SOC nodes are
linearly interpolated. The forward pass re-simulates the continuous SOC and
prices each step with the environment's stage cost.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hevtl import powertrain as pt
from hevtl.cycles import DrivingCycle
from hevtl.errors import DomainError

INFEASIBLE_COST = 1.0e6
SOC_TOL = 1e-9


@dataclass(frozen=True)
class DpGrid:
    soc_nodes: np.ndarray
    torque_nodes: np.ndarray
    cycle: DrivingCycle

    def __post_init__(self):
        for name in ("soc_nodes", "torque_nodes"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 1 or arr.size < 2:
                raise DomainError(f"{name} needs at least two nodes")
            if np.any(np.diff(arr) <= 0):
                raise DomainError(f"{name} must be strictly increasing")
            object.__setattr__(self, name, arr)
        if self.torque_nodes[0] < 0 or self.torque_nodes[-1] > 115.0:
            raise DomainError("torque nodes must lie within [0, 115] Nm")

    @classmethod
    def uniform(cls, cycle, params: pt.PowertrainParams, n_soc=201, n_torque=24):
        return cls(np.linspace(params.soc_min, params.soc_max, n_soc),
                   np.linspace(0.0, 115.0, n_torque), cycle)


@dataclass
class DpResult:
    j_star: float  # grid value at soc0
    realized_cost: float  # forward re-simulation with continuous SOC
    torques: np.ndarray
    soc: np.ndarray  # SOC after each step
    fuel_g: np.ndarray
    penalty: np.ndarray
    infeasible_steps: int

    @property
    def total_reward(self) -> float:
        return -self.realized_cost


def step_tables(params: pt.PowertrainParams, cycle: DrivingCycle, torque_nodes):
    """Per-step fuel (g) and SOC increment for every torque node.

    Both are independent of SOC, which is what makes the sweep cheap.
    Shapes: (len(cycle), len(torque_nodes)).
    """
    p_req = pt.power_request(params, cycle.speed, cycle.accel)
    _, _, fuel = pt.engine_operating_point(params.engine, torque_nodes)
    _, p_bat, _ = pt.split_power(params, p_req[:, None], torque_nodes[None, :])
    dsoc = pt.soc_derivative(params, p_bat) * cycle.dt
    fuel_g = np.broadcast_to(fuel * cycle.dt, dsoc.shape)
    return fuel_g, dsoc


def _stage(params, soc_next, fuel_g, dt):
    clipped = np.clip(soc_next, 0.0, 1.0)
    delta = np.minimum(clipped - params.soc_ref, 0.0)
    pen = params.lambda_soc * delta * delta * dt
    return fuel_g + pen, pen, clipped


def _infeasible(params, soc_next):
    return (soc_next < params.soc_min - SOC_TOL) | (soc_next > params.soc_max + SOC_TOL)


def dp_solve(grid: DpGrid, params: pt.PowertrainParams | None = None,
             soc0: float | None = None) -> DpResult:
    params = params or pt.PowertrainParams()
    soc0 = params.soc_ref if soc0 is None else soc0
    cycle = grid.cycle
    n = len(cycle)
    if n == 0:
        raise DomainError("empty cycle")
    nodes = grid.soc_nodes
    if not (nodes[0] <= soc0 <= nodes[-1]):
        raise DomainError(f"soc0 {soc0} outside node range [{nodes[0]}, {nodes[-1]}]")
    fuel_g, dsoc = step_tables(params, cycle, grid.torque_nodes)
    dt = cycle.dt

    values = np.zeros((n + 1, nodes.size))
    for t in range(n - 1, -1, -1):
        nxt = nodes[:, None] + dsoc[t][None, :]
        cost, _, clipped = _stage(params, nxt, fuel_g[t][None, :], dt)
        q = cost + np.interp(clipped, nodes, values[t + 1])
        q = np.where(_infeasible(params, nxt), INFEASIBLE_COST, q)
        values[t] = q.min(axis=1)
    j_star = float(np.interp(soc0, nodes, values[0]))

    soc = soc0
    torques = np.empty(n)
    socs = np.empty(n)
    fuel_out = np.empty(n)
    pen_out = np.empty(n)
    infeasible = 0
    for t in range(n):
        nxt = soc + dsoc[t]
        cost, pen, clipped = _stage(params, nxt, fuel_g[t], dt)
        q = cost + np.interp(clipped, nodes, values[t + 1])
        bad = _infeasible(params, nxt)
        q = np.where(bad, INFEASIBLE_COST, q)
        k = int(np.argmin(q))
        infeasible += int(bad[k])
        torques[t] = grid.torque_nodes[k]
        soc = float(clipped[k])
        socs[t] = soc
        fuel_out[t] = fuel_g[t, k]
        pen_out[t] = pen[k]
    realized = float(np.sum(fuel_out) + np.sum(pen_out))
    return DpResult(j_star, realized, torques, socs, fuel_out, pen_out, infeasible)


def dp_refine_study(cycle: DrivingCycle, params: pt.PowertrainParams | None = None,
                    soc_ladder=(51, 101, 201), n_torque: int = 24, soc0: float | None = None):
    """J* and realized cost for each SOC resolution in an increasing ladder."""
    params = params or pt.PowertrainParams()
    ladder = list(soc_ladder)
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise DomainError("node-count ladder must be increasing")
    rows = []
    for n_soc in ladder:
        res = dp_solve(DpGrid.uniform(cycle, params, n_soc, n_torque), params, soc0)
        rows.append({"n_soc": n_soc, "n_torque": n_torque, "j_star": res.j_star,
                     "realized_cost": res.realized_cost})
    return rows


def torque_policy(result: DpResult):
    """Replay the DP torque sequence through ``env.rollout``."""
    seq = result.torques.tolist()
    state = {"t": 0}

    def policy(obs, rng):
        k = state["t"]
        state["t"] += 1
        return seq[k]

    return policy
