"""Closed-form trajectories for the solvable special cases.

These are the oracles the numeric stepper is checked against: the
two-technology logistic, and the two limits where one technology is
favoured (or disfavoured) against every other. ``scale`` is the time
scaling factor k; pass 1 for the raw derivation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import Technology, as_fleet, avg_lead_time, avg_lifetime


@dataclass(frozen=True)
class PairwiseTransition:
    """A two-technology logistic. ``time_constant`` is signed: positive means tech 1 wins.

    With exactly balanced preferences there is no transition; the constant
    is then infinite and ``transition`` is False.
    """

    time_constant: float
    midpoint_time: float
    initial_share: float

    @property
    def transition(self) -> bool:
        return math.isfinite(self.time_constant)

    def share(self, t):
        return pairwise_logistic(self.time_constant, self.initial_share, t)


def pairwise_time_constant(
    tech1: Technology,
    tech2: Technology,
    f12: float,
    mean_lead_time: float,
    scale: float = 10.0,
) -> float:
    """T_12 = 1 / (k tbar F_12 / (t_1 tau_2) - k tbar F_21 / (t_2 tau_1)); inf when balanced."""
    if not 0.0 <= f12 <= 1.0:
        raise ValueError(f"F_12 must lie in [0, 1], got {f12}")
    f21 = 1.0 - f12
    a = tech1.lead_time * tech2.lifetime
    b = tech2.lead_time * tech1.lifetime
    # over a common denominator, which avoids cancellation in the difference of rates
    net = f12 * b - f21 * a
    if net == 0.0:
        return math.inf
    return a * b / (scale * mean_lead_time * net)


def pairwise_transition(tech1, tech2, f12, shares0, scale=10.0) -> PairwiseTransition:
    """Transition descriptor for a two-tech system starting from ``shares0``."""
    fleet = as_fleet([tech1, tech2])
    s10 = float(shares0[0])
    tc = pairwise_time_constant(tech1, tech2, f12, avg_lead_time(shares0, fleet), scale)
    if math.isfinite(tc) and 0.0 < s10 < 1.0:
        midpoint = -tc * math.log(s10 / (1.0 - s10))
    else:
        midpoint = math.nan
    return PairwiseTransition(tc, midpoint, s10)


def pairwise_logistic(time_constant: float, initial_share: float, t):
    """S_1(t) = 1 / (1 + ((1 - S_1(0)) / S_1(0)) exp(-t / T_12))."""
    t = np.asarray(t, dtype=float)
    if not math.isfinite(time_constant) or initial_share in (0.0, 1.0):
        return np.full_like(t, initial_share)
    # same curve written as expit(t/T - log c) so large |t| cannot overflow
    c = (1.0 - initial_share) / initial_share
    return expit(t / time_constant - math.log(c))


def favoured_time_constant(tech: Technology, mean_lead_time: float, mean_lifetime: float, scale: float = 10.0) -> float:
    """Growth time constant (t_i / tbar) * taubar / k."""
    return tech.lead_time / mean_lead_time * mean_lifetime / scale


def disfavoured_time_constant(tech: Technology, scale: float = 10.0) -> float:
    return tech.lifetime / scale


def favoured_limit(i: int, techs, shares0, t, scale: float = 10.0):
    """Share of technology ``i`` when it is preferred over all others.

    S_i(t) = 1 / (taubar/tau_i + C exp(-t / T)), C set by S_i(0), with
    taubar and tbar frozen at their initial values. Only trustworthy while
    S_i stays below about a half; the fleet averages drift beyond that.
    """
    fleet = as_fleet(techs)
    s0 = np.asarray(shares0, float)
    tbar = avg_lead_time(s0, fleet)
    taubar = avg_lifetime(s0, fleet)
    tech = fleet.technologies[i]
    carrying = taubar / tech.lifetime
    c = 1.0 / s0[i] - carrying
    tc = favoured_time_constant(tech, tbar, taubar, scale)
    return 1.0 / (carrying + c * np.exp(-np.asarray(t, float) / tc))


def disfavoured_limit(i: int, techs, shares0, t, scale: float = 10.0):
    """Share of technology ``i`` when every other technology is preferred over it.

    S_i(t) = 1 / (tbar/t_i + C exp(k t / tau_i)), C set by S_i(0).
    """
    fleet = as_fleet(techs)
    s0 = np.asarray(shares0, float)
    tbar = avg_lead_time(s0, fleet)
    tech = fleet.technologies[i]
    offset = tbar / tech.lead_time
    c = 1.0 / s0[i] - offset
    tc = disfavoured_time_constant(tech, scale)
    return 1.0 / (offset + c * np.exp(np.asarray(t, float) / tc))


def traversal_time(time_constant: float, start: float = 0.99, end: float = 0.01) -> float:
    """Time for a unit-capacity logistic decline to go from ``start`` to ``end``."""
    logit = lambda p: math.log(p / (1.0 - p))  # noqa: E731
    return abs(time_constant) * (logit(start) - logit(end))
