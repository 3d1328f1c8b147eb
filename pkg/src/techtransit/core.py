"""Domain types and accounting identities.

Capacity is the single source of truth: shares, market shares and the
share-weighted fleet averages are always derived from the capacity vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

SHARE_TOL = 1e-12


class DomainError(ValueError):
    """Raised when an accounting identity has no valid value (empty system, zero CF)."""


@dataclass(frozen=True)
class Technology:
    id: str
    lifetime: float
    lead_time: float
    capacity_factor: float = 1.0
    efficiency: float = 1.0
    base_cost: float = 1.0
    segment_coeffs: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not self.lifetime > 0 or not self.lead_time > 0:
            raise DomainError(f"{self.id}: lifetime and lead_time must be positive")
        if self.lifetime < self.lead_time:
            raise DomainError(f"{self.id}: lifetime {self.lifetime} shorter than lead time {self.lead_time}")
        if not 0 < self.capacity_factor <= 1:
            raise DomainError(f"{self.id}: capacity_factor must lie in (0, 1]")
        if any(a not in (-1, 0, 1) for a in self.segment_coeffs):
            raise DomainError(f"{self.id}: segment coefficients must be -1, 0 or +1")


@dataclass(frozen=True)
class Fleet:
    """An ordered set of technologies with their parameters as arrays.

    ``intensity`` selects the efficiency convention: when True, ``efficiency``
    is an intensity such as tCO2/GWh where lower is better.
    """

    technologies: tuple[Technology, ...]
    intensity: bool = True
    lifetimes: np.ndarray = field(init=False, repr=False, compare=False)
    lead_times: np.ndarray = field(init=False, repr=False, compare=False)
    capacity_factors: np.ndarray = field(init=False, repr=False, compare=False)
    efficiencies: np.ndarray = field(init=False, repr=False, compare=False)
    base_costs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        techs = tuple(self.technologies)
        if not techs:
            raise DomainError("a fleet needs at least one technology")
        ids = [t.id for t in techs]
        if len(set(ids)) != len(ids):
            raise DomainError(f"duplicate technology ids in {ids}")
        object.__setattr__(self, "technologies", techs)
        for name, attr in [
            ("lifetimes", "lifetime"),
            ("lead_times", "lead_time"),
            ("capacity_factors", "capacity_factor"),
            ("efficiencies", "efficiency"),
            ("base_costs", "base_cost"),
        ]:
            arr = np.array([getattr(t, attr) for t in techs], dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.technologies)

    @property
    def ids(self) -> list[str]:
        return [t.id for t in self.technologies]

    @property
    def intensities(self) -> np.ndarray:
        """Inefficiency per technology: the value a driver penalises."""
        return self.efficiencies if self.intensity else 1.0 / self.efficiencies

    def better(self, a: float, b: float) -> bool:
        """True when efficiency value ``a`` is strictly better than ``b``."""
        return a < b if self.intensity else a > b


def as_fleet(techs: Fleet | Iterable[Technology], intensity: bool = True) -> Fleet:
    if isinstance(techs, Fleet):
        return techs
    return Fleet(tuple(techs), intensity=intensity)


@dataclass(frozen=True)
class SystemState:
    """Capacities at one instant, plus phase-out bookkeeping.

    ``low_since`` holds, per technology, the time its share first dropped
    below the retirement threshold (NaN while above it).
    """

    time: float
    capacities: np.ndarray
    demand: float = float("nan")
    retired: np.ndarray | None = None
    low_since: np.ndarray | None = None

    def __post_init__(self) -> None:
        u = np.array(self.capacities, dtype=float)
        if u.ndim != 1:
            raise DomainError("capacities must be a vector")
        if np.any(u < 0):
            raise DomainError(f"negative capacity in {u}")
        u.setflags(write=False)
        object.__setattr__(self, "capacities", u)
        n = u.size
        retired = np.zeros(n, bool) if self.retired is None else np.array(self.retired, bool)
        low = np.full(n, np.nan) if self.low_since is None else np.array(self.low_since, float)
        if retired.shape != (n,) or low.shape != (n,):
            raise DomainError("bookkeeping vectors must match the number of technologies")
        if np.any(u[retired] > 0):
            raise DomainError("a retired technology cannot hold capacity")
        retired.setflags(write=False)
        low.setflags(write=False)
        object.__setattr__(self, "retired", retired)
        object.__setattr__(self, "low_since", low)

    @property
    def total(self) -> float:
        return float(self.capacities.sum())

    @property
    def shares(self) -> np.ndarray:
        return shares(self)

    def with_capacities(self, capacities: np.ndarray, **changes) -> "SystemState":
        return replace(self, capacities=capacities, **changes)


def _shares_of(state_or_shares: SystemState | Sequence[float]) -> np.ndarray:
    if isinstance(state_or_shares, SystemState):
        return shares(state_or_shares)
    return np.asarray(state_or_shares, dtype=float)


def shares(state: SystemState | Sequence[float]) -> np.ndarray:
    """Capacity shares S_i = U_i / U_tot."""
    u = state.capacities if isinstance(state, SystemState) else np.asarray(state, dtype=float)
    total = u.sum()
    if not total > 0:
        raise DomainError("total capacity is zero; shares undefined")
    s = u / total
    # one renormalisation pass pulls the sum to within an ulp or two of 1
    return s / s.sum()


def avg_lifetime(state, techs) -> float:
    """Harmonic share-weighted mean lifetime."""
    s = _shares_of(state)
    return float(1.0 / np.dot(s, 1.0 / as_fleet(techs).lifetimes))


def avg_lead_time(state, techs) -> float:
    """Harmonic share-weighted mean lead time."""
    s = _shares_of(state)
    return float(1.0 / np.dot(s, 1.0 / as_fleet(techs).lead_times))


def avg_capacity_factor(state, techs) -> float:
    return float(np.dot(_shares_of(state), as_fleet(techs).capacity_factors))


def avg_efficiency(state, techs) -> float:
    return float(np.dot(_shares_of(state), as_fleet(techs).efficiencies))


def market_shares(state, techs) -> np.ndarray:
    """Shares of demand, sigma_i = (CF_i / mean CF) S_i."""
    fleet = as_fleet(techs)
    s = _shares_of(state)
    cf_bar = float(np.dot(s, fleet.capacity_factors))
    if not cf_bar > 0:
        raise DomainError("average capacity factor is zero")
    sigma = fleet.capacity_factors * s / cf_bar
    return sigma / sigma.sum()


def capacity_for_demand(shares_vec: Sequence[float], demand: float, techs) -> np.ndarray:
    """Capacities that serve ``demand`` with the given share mix: U_i = S_i D / mean CF."""
    if not demand > 0:
        raise DomainError(f"demand must be positive, got {demand}")
    s = np.asarray(shares_vec, dtype=float)
    cf_bar = float(np.dot(s, as_fleet(techs).capacity_factors))
    if not cf_bar > 0:
        raise DomainError("average capacity factor is zero")
    return s * demand / cf_bar


@dataclass(frozen=True)
class AggregateReport:
    avg_capacity_factor: float
    avg_lifetime: float
    avg_lead_time: float
    avg_efficiency: float
    market_shares: np.ndarray


def aggregate(state, techs) -> AggregateReport:
    fleet = as_fleet(techs)
    s = _shares_of(state)
    return AggregateReport(
        avg_capacity_factor=avg_capacity_factor(s, fleet),
        avg_lifetime=avg_lifetime(s, fleet),
        avg_lead_time=avg_lead_time(s, fleet),
        avg_efficiency=avg_efficiency(s, fleet),
        market_shares=market_shares(s, fleet),
    )


def update_retirements(
    state: SystemState,
    threshold: float = 1e-9,
    duration: float = 5.0,
) -> SystemState:
    """Apply the phase-out rule: a share below ``threshold`` for ``duration`` years retires.

    Retired technologies have their capacity zeroed and stay retired.
    """
    s = shares(state)
    low = state.low_since.copy()
    below = s < threshold
    low[~below] = np.nan
    start = below & np.isnan(low)
    low[start] = state.time
    retired = state.retired | (below & (state.time - low >= duration - 1e-9))
    if np.array_equal(retired, state.retired) and np.array_equal(low, state.low_since, equal_nan=True):
        return state
    u = state.capacities.copy()
    u[retired] = 0.0
    return replace(state, capacities=u, retired=retired, low_since=low)


@dataclass(frozen=True)
class TimeSeries:
    """Piecewise-linear table of (year, value) points."""

    years: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        years = tuple(float(y) for y in self.years)
        values = tuple(float(v) for v in self.values)
        if not years or len(years) != len(values):
            raise ValueError("a time series needs matching, non-empty years and values")
        if any(b <= a for a, b in zip(years, years[1:])):
            raise ValueError("time-series years must be strictly increasing")
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value: float) -> "TimeSeries":
        return cls((0.0,), (value,))

    def __call__(self, t: float) -> float:
        if len(self.years) == 1:
            return self.values[0]
        return float(np.interp(t, self.years, self.values))

    def covers(self, start: float, end: float) -> bool:
        if len(self.years) == 1:
            return True
        return self.years[0] <= start + 1e-9 and self.years[-1] >= end - 1e-9
