"""Time stepper for the coupled capacity and share equations.

Capacity changes have three parts: the pairwise exchange of retiring units
between technologies, new builds when total capacity must grow, and
permanent decommissions when it must shrink. ``step_full`` integrates all
three in capacity space; ``step_simplified`` is the pure shares equation
with the demand-correction terms dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .core import (
    DomainError,
    Fleet,
    SystemState,
    as_fleet,
    avg_capacity_factor,
    avg_lead_time,
    avg_lifetime,
    update_retirements,
)
from .preference import PreferenceMatrix

logger = logging.getLogger(__name__)

DEFAULT_SCALE = 10.0
DEFAULT_DT = 0.25
MAX_SHARE_JUMP = 0.5
INTEGRATORS = ("euler", "rk4")
DEMAND_MODES = ("preference", "proportional")

# gate(net_flow_amounts, capacities) -> symmetric factor matrix in [0, 1]
FlowGate = Callable[[np.ndarray, np.ndarray], np.ndarray]


class StabilityError(RuntimeError):
    """A single explicit step moved some share by more than the stability bound."""


@dataclass(frozen=True)
class SubstitutionMatrix:
    """Substitution frequencies A_ij = k * tbar / (t_i tau_j), in 1/yr."""

    frequencies: np.ndarray
    scale: float
    mean_lifetime: float
    mean_lead_time: float

    @property
    def unitless(self) -> np.ndarray:
        return self.frequencies * self.mean_lifetime


def build_substitution_matrix(techs, state, scale: float = DEFAULT_SCALE) -> SubstitutionMatrix:
    if not scale > 0:
        raise ValueError(f"scale factor must be positive, got {scale}")
    fleet = as_fleet(techs)
    tbar = avg_lead_time(state, fleet)
    taubar = avg_lifetime(state, fleet)
    a = scale * tbar / np.outer(fleet.lead_times, fleet.lifetimes)
    return SubstitutionMatrix(a, float(scale), taubar, tbar)


def _f(values: PreferenceMatrix | np.ndarray) -> np.ndarray:
    return values.values if isinstance(values, PreferenceMatrix) else np.asarray(values, float)


@dataclass(frozen=True)
class ExchangeFlows:
    """``directed[i, j]`` is the capacity of j retiring and replaced by i; ``net`` is its antisymmetric part."""

    net: np.ndarray
    directed: np.ndarray


def _directed_rates(u: np.ndarray, f: np.ndarray, a: np.ndarray, retired: np.ndarray | None) -> np.ndarray:
    utot = u.sum()
    d = a * f * np.outer(u, u) / utot
    np.fill_diagonal(d, 0.0)
    if retired is not None and retired.any():
        d[retired, :] = 0.0
    return d


def exchange_term(state: SystemState, techs, F, A: SubstitutionMatrix, dt: float) -> ExchangeFlows:
    """Pairwise exchange over one step: (A_ij F_ij - A_ji F_ji) U_i U_j / U_tot * dt."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    directed = _directed_rates(state.capacities, _f(F), A.frequencies, state.retired) * dt
    net = directed - directed.T
    jump = np.abs(net.sum(axis=1)).max() / state.total
    if jump > MAX_SHARE_JUMP:
        raise StabilityError(f"exchange moves a share by {jump:.3g} in one step; reduce dt")
    return ExchangeFlows(net, directed)


@dataclass(frozen=True)
class Allocation:
    amounts: np.ndarray
    capped: bool = False
    unmet: float = 0.0


def _increase_weights(s, fleet, f, tbar, retired=None):
    n = s.size
    w = (tbar / fleet.lead_times) * (f.sum(axis=1) / n) * s
    if retired is not None:
        w = np.where(retired, 0.0, w)
    return w


def _decrease_weights(s, fleet, f, taubar):
    n = s.size
    return (taubar / fleet.lifetimes) * (f.sum(axis=0) / n) * s


def _rescale(weights: np.ndarray, amount: float) -> np.ndarray:
    total = weights.sum()
    if amount == 0 or total == 0:
        return np.zeros_like(weights)
    return weights * (amount / total)


def demand_increase_alloc(state: SystemState, techs, F, du_up: float, dt: float) -> Allocation:
    """Spread ``du_up`` of new capacity by building rate and preference, capped by build capacity."""
    if du_up < 0:
        raise ValueError(f"capacity increase must be non-negative, got {du_up}")
    fleet = as_fleet(techs)
    s = state.shares
    tbar = avg_lead_time(s, fleet)
    ceiling = state.total * dt / tbar
    amount = min(du_up, ceiling)
    w = _increase_weights(s, fleet, _f(F), tbar, state.retired)
    return Allocation(_rescale(w, amount), capped=du_up > ceiling, unmet=max(du_up - ceiling, 0.0))


def demand_decrease_alloc(state: SystemState, techs, F, du_down: float, dt: float) -> Allocation:
    """Choose the retiring capacity that is not replaced; never more than retires naturally."""
    if du_down < 0:
        raise ValueError(f"capacity decrease must be non-negative, got {du_down}")
    fleet = as_fleet(techs)
    s = state.shares
    taubar = avg_lifetime(s, fleet)
    floor = state.total * dt / taubar
    amount = min(du_down, floor)
    w = _decrease_weights(s, fleet, _f(F), taubar)
    return Allocation(_rescale(w, amount), capped=du_down > floor, unmet=max(du_down - floor, 0.0))


def approximation_error(state, techs, F, du_tot: float) -> np.ndarray:
    """Relative misallocation of new (or scrapped) capacity when demand terms are dropped.

    Per technology, |1 - r_i / rbar| * |dU_tot / U_tot| where r_i is the
    building-rate and preference weight relative to share and rbar its
    share-weighted mean; rbar normalises the allocation so it sums to dU_tot.
    """
    fleet = as_fleet(techs)
    s = state.shares if isinstance(state, SystemState) else np.asarray(state, float)
    utot = state.total if isinstance(state, SystemState) else 1.0
    f = _f(F)
    n = s.size
    if du_tot == 0:
        return np.zeros(n)
    if du_tot > 0:
        ratio = (avg_lead_time(s, fleet) / fleet.lead_times) * f.sum(axis=1) / n
    else:
        ratio = (avg_lifetime(s, fleet) / fleet.lifetimes) * f.sum(axis=0) / n
    ratio = ratio / np.dot(s, ratio)
    return np.abs(1.0 - ratio) * abs(du_tot / utot)


@dataclass(frozen=True)
class StepResult:
    delta_capacities: np.ndarray
    exchange_flows: np.ndarray
    directed_flows: np.ndarray
    new_build: np.ndarray
    permanent_decommission: np.ndarray
    ceiling: bool = False
    floor: bool = False
    unmet: float = 0.0
    clipped: int = 0
    approx_error: float = 0.0
    gate_factors: np.ndarray | None = field(default=None, repr=False)


@dataclass
class _Rates:
    directed: np.ndarray
    up: np.ndarray
    down: np.ndarray
    ceiling: bool
    floor: bool
    unmet: float
    gate: np.ndarray | None

    @property
    def total(self) -> np.ndarray:
        d = self.directed
        return d.sum(axis=1) - d.sum(axis=0) + self.up - self.down


def _rates(u, fleet, f, scale, du_rate, mode, retired, gate, dt) -> _Rates:
    s = u / u.sum()
    a = build_substitution_matrix(fleet, s, scale).frequencies
    directed = _directed_rates(u, f, a, retired)
    g = None
    if gate is not None:
        g = gate((directed - directed.T) * dt, u)
        directed = directed * g
    utot = u.sum()
    n = u.size
    up = np.zeros(n)
    down = np.zeros(n)
    ceiling = floor = False
    unmet = 0.0
    if du_rate > 0:
        tbar = avg_lead_time(s, fleet)
        cap = utot / tbar
        rate = min(du_rate, cap)
        ceiling = du_rate > cap
        unmet = max(du_rate - cap, 0.0) * dt
        w = s if mode == "proportional" else _increase_weights(s, fleet, f, tbar, retired)
        up = _rescale(w, rate)
    elif du_rate < 0:
        taubar = avg_lifetime(s, fleet)
        cap = utot / taubar
        rate = min(-du_rate, cap)
        floor = -du_rate > cap
        unmet = max(-du_rate - cap, 0.0) * dt
        w = s if mode == "proportional" else _decrease_weights(s, fleet, f, taubar)
        down = _rescale(w, rate)
    return _Rates(directed, up, down, ceiling, floor, unmet, g)


def _clip_outflows(u, directed, up, down, max_iter=None):
    """Scale outflows of any technology that would go negative; inflows are never touched."""
    directed = directed.copy()
    down = down.copy()
    clipped = 0
    for _ in range(max_iter or u.size + 1):
        inflow = directed.sum(axis=1) + up
        outflow = directed.sum(axis=0) + down
        short = u + inflow - outflow < 0
        if not short.any():
            break
        idx = np.flatnonzero(short)
        clipped += idx.size
        factor = (u[idx] + inflow[idx]) / outflow[idx]
        directed[:, idx] *= factor
        down[idx] *= factor
    return directed, down, clipped


def required_change(state: SystemState, techs, demand_next: float) -> float:
    """Capacity change needed so the current mix serves ``demand_next``."""
    cf_bar = avg_capacity_factor(state, techs)
    if not cf_bar > 0:
        raise DomainError("average capacity factor is zero")
    return demand_next / cf_bar - state.total


def step_full(
    state: SystemState,
    techs,
    F,
    A: SubstitutionMatrix | None,
    demand_now: float,
    demand_next: float,
    dt: float,
    *,
    scale: float | None = None,
    integrator: str = "euler",
    demand_mode: str = "preference",
    flow_gate: FlowGate | None = None,
    retire_threshold: float = 1e-9,
    retire_after: float = 5.0,
) -> tuple[StepResult, SystemState]:
    """Advance capacities by one step of exchange, new builds and permanent decommissions.

    ``demand_now`` is only used to carry the demand level on the state; the
    required capacity change is taken against the current total.
    """
    if integrator not in INTEGRATORS:
        raise ValueError(f"unknown integrator {integrator!r}")
    if demand_mode not in DEMAND_MODES:
        raise ValueError(f"unknown demand mode {demand_mode!r}")
    if not dt > 0:
        raise ValueError("dt must be positive")
    fleet = as_fleet(techs)
    f = _f(F)
    k = A.scale if A is not None else (DEFAULT_SCALE if scale is None else scale)
    u0 = state.capacities
    du_tot = required_change(state, fleet, demand_next)
    du_rate = du_tot / dt

    def rates(u):
        return _rates(u, fleet, f, k, du_rate, demand_mode, state.retired, flow_gate, dt)

    r1 = rates(u0)
    if integrator == "euler":
        directed = r1.directed * dt
        up = r1.up * dt
        down = r1.down * dt
    else:
        r2 = rates(np.maximum(u0 + 0.5 * dt * r1.total, 0.0))
        r3 = rates(np.maximum(u0 + 0.5 * dt * r2.total, 0.0))
        r4 = rates(np.maximum(u0 + dt * r3.total, 0.0))
        w = (1.0, 2.0, 2.0, 1.0)
        stages = (r1, r2, r3, r4)
        directed = sum(c * r.directed for c, r in zip(w, stages)) * dt / 6.0
        up = sum(c * r.up for c, r in zip(w, stages)) * dt / 6.0
        down = sum(c * r.down for c, r in zip(w, stages)) * dt / 6.0

    directed, down, clipped = _clip_outflows(u0, directed, up, down)
    if clipped:
        logger.debug("clipped outflows of %d technologies at t=%g", clipped, state.time)
    net = directed - directed.T
    delta = net.sum(axis=1) + up - down
    u1 = np.maximum(u0 + delta, 0.0)
    s0 = u0 / u0.sum()
    s1 = u1 / u1.sum()
    jump = np.abs(s1 - s0).max()
    if jump > MAX_SHARE_JUMP:
        raise StabilityError(f"a share moved by {jump:.3g} in one step at t={state.time:g}; reduce dt")

    err = approximation_error(state, fleet, f, du_tot)
    result = StepResult(
        delta_capacities=delta,
        exchange_flows=net,
        directed_flows=directed,
        new_build=up,
        permanent_decommission=down,
        ceiling=r1.ceiling,
        floor=r1.floor,
        unmet=r1.unmet,
        clipped=clipped,
        approx_error=float(err.max()) if err.size else 0.0,
        gate_factors=r1.gate,
    )
    new_state = replace(state, time=state.time + dt, capacities=u1, demand=demand_next)
    return result, update_retirements(new_state, retire_threshold, retire_after)


def share_rates(s: np.ndarray, fleet: Fleet, f: np.ndarray, scale: float, retired=None) -> np.ndarray:
    """Right-hand side of the shares equation, dS_i/dt = sum_j (A_ij F_ij - A_ji F_ji) S_i S_j."""
    a = build_substitution_matrix(fleet, s, scale).frequencies
    m = a * f
    if retired is not None and np.any(retired):
        m = m.copy()
        m[retired, :] = 0.0
    pair = (m - m.T) * np.outer(s, s)
    return pair.sum(axis=1)


def step_simplified(
    state: SystemState | np.ndarray,
    techs,
    F,
    A: SubstitutionMatrix | float | None,
    dt: float,
    integrator: str = "euler",
) -> np.ndarray:
    """One step of the shares equation with the demand-correction terms dropped."""
    if integrator not in INTEGRATORS:
        raise ValueError(f"unknown integrator {integrator!r}")
    fleet = as_fleet(techs)
    retired = state.retired if isinstance(state, SystemState) else None
    s = state.shares if isinstance(state, SystemState) else np.asarray(state, float)
    k = A.scale if isinstance(A, SubstitutionMatrix) else (DEFAULT_SCALE if A is None else float(A))
    f = _f(F)

    def rhs(x):
        return share_rates(x, fleet, f, k, retired)

    if integrator == "euler":
        ds = rhs(s) * dt
    else:
        k1 = rhs(s)
        k2 = rhs(s + 0.5 * dt * k1)
        k3 = rhs(s + 0.5 * dt * k2)
        k4 = rhs(s + dt * k3)
        ds = (k1 + 2 * k2 + 2 * k3 + k4) * dt / 6.0
    jump = np.abs(ds).max()
    if jump > MAX_SHARE_JUMP:
        raise StabilityError(f"a share moved by {jump:.3g} in one step; reduce dt")
    return s + ds


def integrate_shares(
    s0,
    techs,
    F,
    scale: float,
    dt: float,
    horizon: float,
    integrator: str = "euler",
) -> tuple[np.ndarray, np.ndarray]:
    """Run ``step_simplified`` with a fixed preference matrix; returns (times, shares[steps+1, N])."""
    steps = int(round(horizon / dt))
    out = np.empty((steps + 1, len(np.atleast_1d(s0))))
    out[0] = s = np.asarray(s0, float)
    for n in range(steps):
        s = step_simplified(s, techs, F, scale, dt, integrator)
        out[n + 1] = s
    return np.arange(steps + 1) * dt, out
