"""Market-segment share limits and the gating of cross-segment exchange.

A constraint sums the shares of the technologies that contribute to a
demand segment, each with coefficient +1, -1 or 0, and bounds that sum from
above or below. For each contributing technology this gives a share limit:
the largest (or smallest) share it can take given everybody else's current
contribution. When a limit is approached, exchange flows that would push
across it are attenuated by a smooth factor, so substitution carries on
inside the segment while trade with the rest of the market dries up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .core import SystemState, TimeSeries, as_fleet, avg_capacity_factor

CROSSING_TOL = 1e-6
DEFAULT_WIDTH = 0.05


class ConstraintError(ValueError):
    pass


@dataclass(frozen=True)
class MarketConstraint:
    """``kind="capacity"`` bounds a capacity share; ``"demand"`` bounds a share of demand."""

    name: str
    coefficients: tuple[int, ...]
    bound: float | TimeSeries
    sign: str = "upper"
    kind: str = "capacity"
    width: float = DEFAULT_WIDTH

    def __post_init__(self) -> None:
        coeffs = tuple(int(a) for a in self.coefficients)
        object.__setattr__(self, "coefficients", coeffs)
        if any(a not in (-1, 0, 1) for a in coeffs):
            raise ConstraintError(f"{self.name}: coefficients must be -1, 0 or +1")
        if not any(coeffs):
            raise ConstraintError(f"{self.name}: needs at least one nonzero coefficient")
        if self.sign not in ("upper", "lower"):
            raise ConstraintError(f"{self.name}: sign must be 'upper' or 'lower'")
        if self.kind not in ("capacity", "demand"):
            raise ConstraintError(f"{self.name}: kind must be 'capacity' or 'demand'")
        if not self.width > 0:
            raise ConstraintError(f"{self.name}: gating width must be positive")
        values = self.bound.values if isinstance(self.bound, TimeSeries) else (self.bound,)
        if any(not 0.0 <= float(v) <= 1.0 for v in values):
            raise ConstraintError(f"{self.name}: bound must lie in [0, 1]")

    def bound_at(self, t: float | None) -> float:
        if isinstance(self.bound, TimeSeries):
            return self.bound(0.0 if t is None else t)
        return float(self.bound)

    @property
    def direction(self) -> int:
        return 1 if self.sign == "upper" else -1


@dataclass(frozen=True)
class ShareLimits:
    """Per-technology limits plus the per-constraint detail gating needs.

    ``headroom[k, m]`` is how far technology m can move toward constraint k's
    bound (NaN when m does not contribute); negative means violated.
    """

    upper: np.ndarray
    lower: np.ndarray
    upper_by: list[str | None]
    lower_by: list[str | None]
    headroom: np.ndarray
    coefficients: np.ndarray
    directions: np.ndarray
    widths: np.ndarray
    names: list[str]

    @property
    def binding(self) -> list[str]:
        """Constraints whose gate is partly closed (headroom below the gating width)."""
        out = []
        for k, name in enumerate(self.names):
            h = np.nanmin(self.headroom[k])
            if h < self.widths[k]:
                out.append(name)
        return out


def share_limits(state, techs, constraints, time: float | None = None) -> ShareLimits:
    """Tightest upper and lower share limit per technology over all constraints."""
    fleet = as_fleet(techs)
    s = state.shares if isinstance(state, SystemState) else np.asarray(state, float)
    n = s.size
    k = len(constraints)
    upper = np.ones(n)
    lower = np.zeros(n)
    upper_by: list[str | None] = [None] * n
    lower_by: list[str | None] = [None] * n
    headroom = np.full((k, n), np.nan)
    coeffs = np.zeros((k, n))
    cf_bar = avg_capacity_factor(s, fleet)
    for c_idx, con in enumerate(constraints):
        a = np.asarray(con.coefficients, float)
        if a.size != n:
            raise ConstraintError(f"{con.name}: {a.size} coefficients for {n} technologies")
        coeffs[c_idx] = a
        frac = con.bound_at(time)
        bound = frac * cf_bar / fleet.capacity_factors if con.kind == "demand" else np.full(n, frac)
        contribution = float(np.dot(a, s))
        h = con.direction * (bound - contribution)
        for m in np.flatnonzero(a):
            headroom[c_idx, m] = h[m]
            if a[m] * con.direction > 0:
                lim = s[m] + h[m]
                if lim < upper[m]:
                    upper[m], upper_by[m] = lim, con.name
            else:
                lim = s[m] - h[m]
                if lim > lower[m]:
                    lower[m], lower_by[m] = lim, con.name
    return ShareLimits(
        upper=upper,
        lower=lower,
        upper_by=upper_by,
        lower_by=lower_by,
        headroom=headroom,
        coefficients=coeffs,
        directions=np.array([c.direction for c in constraints], float),
        widths=np.array([c.width for c in constraints], float),
        names=[c.name for c in constraints],
    )


@dataclass
class SplittingReport:
    factors: np.ndarray
    submarkets: list[list[int]] = field(default_factory=list)
    gated_pairs: int = 0


def _pair_headroom(h: np.ndarray) -> np.ndarray:
    hh = np.where(np.isnan(h), np.inf, h)
    return np.minimum(hh[:, None], hh[None, :])


def gate_factors(flows: np.ndarray, limits: ShareLimits, total: float) -> np.ndarray:
    """Symmetric attenuation factors in [0, 1] for a matrix of net flows (amounts per step)."""
    flows = np.asarray(flows, float)
    n = flows.shape[0]
    g = np.ones((n, n))
    gains = flows > 0
    for k in range(len(limits.names)):
        a = limits.coefficients[k]
        d = limits.directions[k]
        push = gains & (d * (a[:, None] - a[None, :]) > 0)
        if not push.any():
            continue
        h = _pair_headroom(limits.headroom[k])
        soft = np.clip(h / limits.widths[k], 0.0, 1.0)
        gk = np.where(push, soft, 1.0)
        gk = np.minimum(gk, gk.T)
        # backstop: never let one step carry the constraint sum past its bound
        moved = flows * gk * push
        toward = d * float(np.sum(a[:, None] * moved - a[None, :] * moved)) / total
        relief_flows = flows * gk * (gains & ~push)
        relief = d * float(np.sum(a[:, None] * relief_flows - a[None, :] * relief_flows)) / total
        room = float(np.nanmin(np.where(np.isnan(limits.headroom[k]), np.nan, limits.headroom[k])))
        if toward > 0 and toward + relief > room:
            gamma = max((room - relief) / toward, 0.0)
            sym_push = push | push.T
            gk = np.where(sym_push, gk * min(gamma, 1.0), gk)
        g = np.minimum(g, gk)
    return g


def gate_flows(flows: np.ndarray, limits: ShareLimits, state: SystemState) -> tuple[np.ndarray, SplittingReport]:
    """Attenuate flows that push shares past their limits; antisymmetry is preserved.

    Submarkets are the connected components of technology pairs whose
    exchange is left ungated.
    """
    flows = np.asarray(flows, float)
    if not np.allclose(flows, -flows.T, rtol=0.0, atol=1e-12 * max(state.total, 1.0)):
        raise ConstraintError("flow matrix must be antisymmetric")
    g = gate_factors(flows, limits, state.total)
    gated = flows * g
    return gated, SplittingReport(g, submarkets(g), int(np.count_nonzero(np.triu(g < 1.0, 1))))


def submarkets(factors: np.ndarray) -> list[list[int]]:
    n = factors.shape[0]
    adj = (factors >= 1.0) & ~np.eye(n, dtype=bool)
    count, labels = connected_components(csr_matrix(adj), directed=False)
    return [sorted(np.flatnonzero(labels == c).tolist()) for c in range(count)]


def make_gate(techs, constraints, time: float | None = None):
    """Flow gate for ``dynamics.step_full``: limits are recomputed from the capacities it is given."""
    fleet = as_fleet(techs)

    def gate(net_amounts: np.ndarray, capacities: np.ndarray) -> np.ndarray:
        s = capacities / capacities.sum()
        limits = share_limits(s, fleet, constraints, time)
        return gate_factors(net_amounts, limits, float(capacities.sum()))

    return gate


def violations(state, techs, constraints, time: float | None = None, tol: float = CROSSING_TOL) -> list[str]:
    """Names of constraints whose bound is crossed by more than ``tol``."""
    if not constraints:
        return []
    lim = share_limits(state, techs, constraints, time)
    return [name for k, name in enumerate(lim.names) if np.nanmin(lim.headroom[k]) < -tol]
