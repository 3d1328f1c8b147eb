"""The run loop: preferences, constraints and the stepper over a scenario horizon."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..constraints import ConstraintError, make_gate, share_limits
from ..core import SystemState, aggregate, capacity_for_demand, update_retirements
from ..dynamics import approximation_error, required_change, step_full, step_simplified
from ..preference import apply_driver
from .config import Scenario

logger = logging.getLogger(__name__)

SHARE_SUM_TOL = 1e-9
CONSTRAINT_TOL = 1e-6


@dataclass
class Trajectory:
    """One row per emitted step; array fields are [rows] or [rows, N]."""

    ids: list[str]
    times: np.ndarray
    capacities: np.ndarray
    shares: np.ndarray
    market_shares: np.ndarray
    demand: np.ndarray
    driver: np.ndarray
    avg_capacity_factor: np.ndarray
    avg_lifetime: np.ndarray
    avg_lead_time: np.ndarray
    avg_efficiency: np.ndarray
    binding: list[str]
    retired: list[str]
    ceiling: np.ndarray
    floor: np.ndarray
    unmet: np.ndarray
    clipped: np.ndarray
    approx_error: np.ndarray

    def __len__(self) -> int:
        return self.times.size

    def share(self, tech_id: str) -> np.ndarray:
        return self.shares[:, self.ids.index(tech_id)]

    @classmethod
    def empty(cls, ids: list[str]) -> "Trajectory":
        n = len(ids)
        z = np.empty(0)
        zn = np.empty((0, n))
        return cls(list(ids), z, zn, zn, zn, z, z, z, z, z, z, [], [], z.astype(bool), z.astype(bool), z,
                   z.astype(int), z)


class _Recorder:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.rows: dict[str, list] = {k: [] for k in (
            "times", "capacities", "shares", "market_shares", "demand", "driver", "avg_capacity_factor",
            "avg_lifetime", "avg_lead_time", "avg_efficiency", "binding", "retired", "ceiling", "floor",
            "unmet", "clipped", "approx_error")}

    def add(self, state: SystemState, driver: float, diag: dict) -> None:
        fleet = self.sc.fleet
        s = state.shares
        if abs(s.sum() - 1.0) > SHARE_SUM_TOL:
            raise RuntimeError(f"shares sum to {s.sum():.15g} at t={state.time:g}")
        binding = ""
        if self.sc.constraints:
            lim = share_limits(s, fleet, self.sc.constraints, state.time)
            for k, name in enumerate(lim.names):
                if np.nanmin(lim.headroom[k]) < -CONSTRAINT_TOL:
                    raise ConstraintError(f"constraint {name} crossed at t={state.time:g}")
            binding = "|".join(lim.binding)
        r = self.rows
        agg = aggregate(s, fleet)
        r["times"].append(state.time)
        r["capacities"].append(state.capacities)
        r["shares"].append(s)
        r["market_shares"].append(agg.market_shares)
        r["demand"].append(float(np.dot(fleet.capacity_factors, state.capacities)))
        r["driver"].append(driver)
        r["avg_capacity_factor"].append(agg.avg_capacity_factor)
        r["avg_lifetime"].append(agg.avg_lifetime)
        r["avg_lead_time"].append(agg.avg_lead_time)
        r["avg_efficiency"].append(agg.avg_efficiency)
        r["binding"].append(binding)
        r["retired"].append("|".join(i for i, flag in zip(fleet.ids, state.retired) if flag))
        for key in ("ceiling", "floor", "unmet", "clipped", "approx_error"):
            r[key].append(diag.get(key, 0))

    def build(self) -> Trajectory:
        r = self.rows
        return Trajectory(
            ids=self.sc.ids,
            times=np.array(r["times"], float),
            capacities=np.array(r["capacities"], float),
            shares=np.array(r["shares"], float),
            market_shares=np.array(r["market_shares"], float),
            demand=np.array(r["demand"], float),
            driver=np.array(r["driver"], float),
            avg_capacity_factor=np.array(r["avg_capacity_factor"], float),
            avg_lifetime=np.array(r["avg_lifetime"], float),
            avg_lead_time=np.array(r["avg_lead_time"], float),
            avg_efficiency=np.array(r["avg_efficiency"], float),
            binding=list(r["binding"]),
            retired=list(r["retired"]),
            ceiling=np.array(r["ceiling"], bool),
            floor=np.array(r["floor"], bool),
            unmet=np.array(r["unmet"], float),
            clipped=np.array(r["clipped"], int),
            approx_error=np.array(r["approx_error"], float),
        )


def _demand_at(scenario: Scenario, t: float, fallback: float) -> float:
    return scenario.demand(t) if scenario.demand is not None else fallback


def run(scenario: Scenario) -> Trajectory:
    """Integrate a scenario; the first row is the initial state.

    A zero-length horizon gives an empty trajectory. Preferences are
    recomputed every step from the driver level (and learning, when on).
    Learning counts gross construction: exchange inflows, new builds and
    retirements replaced by their own type.
    """
    rs = scenario.run
    fleet = scenario.fleet
    steps = rs.steps
    if steps == 0:
        return Trajectory.empty(scenario.ids)

    u0 = scenario.initial_capacities
    base_demand = float(np.dot(fleet.capacity_factors, u0))
    state = SystemState(rs.start, u0.copy(), demand=_demand_at(scenario, rs.start, base_demand))
    cumulative = None if scenario.initial_cumulative is None else scenario.initial_cumulative.copy()
    rec = _Recorder(scenario)
    rec.add(state, scenario.driver(rs.start), {})

    for n in range(steps):
        t = rs.start + n * rs.dt
        t_next = rs.start + (n + 1) * rs.dt
        f = apply_driver(scenario.preference, scenario.driver, t, fleet, cumulative, scenario.initial_cumulative)
        d_now = _demand_at(scenario, t, base_demand)
        d_next = _demand_at(scenario, t_next, base_demand)
        if rs.equation == "full":
            gate = make_gate(fleet, scenario.constraints, t) if scenario.constraints else None
            result, new_state = step_full(
                state, fleet, f, None, d_now, d_next, rs.dt,
                scale=rs.scale, integrator=rs.integrator, demand_mode=rs.demand_mode, flow_gate=gate,
                retire_threshold=rs.retire_threshold, retire_after=rs.retire_after,
            )
            diag = dict(ceiling=result.ceiling, floor=result.floor, unmet=result.unmet,
                        clipped=result.clipped, approx_error=result.approx_error)
            if cumulative is not None:
                inflow = result.directed_flows.sum(axis=1) - np.diag(result.directed_flows)
                outflow = result.directed_flows.sum(axis=0) - np.diag(result.directed_flows)
                natural = rs.scale * state.capacities * rs.dt / fleet.lifetimes
                own = np.maximum(natural - outflow - result.permanent_decommission, 0.0)
                cumulative = cumulative + inflow + result.new_build + own
        else:
            s_new = step_simplified(state, fleet, f, rs.scale, rs.dt, rs.integrator)
            s_new = np.maximum(s_new, 0.0)
            s_new = s_new / s_new.sum()
            du = required_change(state, fleet, d_next)
            err = approximation_error(state, fleet, f, du)
            u_new = capacity_for_demand(s_new, d_next, fleet)
            new_state = update_retirements(
                SystemState(t_next, u_new, d_next, state.retired, state.low_since),
                rs.retire_threshold, rs.retire_after,
            )
            diag = dict(approx_error=float(err.max()))
            if cumulative is not None:
                cumulative = cumulative + np.maximum(u_new - state.capacities, 0.0) + rs.scale * state.capacities * rs.dt / fleet.lifetimes
        state = new_state
        rec.add(state, scenario.driver(t_next), diag)
    return rec.build()
