"""Experiment harnesses: technology ladder under driver ramps, and hysteresis after a pulse."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import median_filter

from ..core import SystemState, TimeSeries
from ..micro import DivergenceReport, compare_meanfield, meanfield_yearly, run_micro
from ..preference import CostModel, apply_driver
from .config import Scenario
from .runner import Trajectory, run


def smooth3(series) -> np.ndarray:
    """3-point running median; end points use the nearest value."""
    return median_filter(np.asarray(series, float), size=3, mode="nearest")


def strict_maxima(series) -> list[int]:
    """Indices of strict interior local maxima; flat runs count once."""
    x = np.asarray(series, float)
    keep = np.concatenate([[True], np.diff(x) != 0])
    idx = np.flatnonzero(keep)
    y = x[idx]
    peaks = np.flatnonzero((y[1:-1] > y[:-2]) & (y[1:-1] > y[2:])) + 1
    return idx[peaks].tolist()


def is_unimodal(series) -> bool:
    """Exactly one strict interior maximum after 3-point median smoothing."""
    return len(strict_maxima(smooth3(series))) == 1


def peak_width(times, series) -> float:
    """Full width at half maximum of the largest peak; NaN if either half crossing is missing."""
    t = np.asarray(times, float)
    x = np.asarray(series, float)
    p = int(np.argmax(x))
    half = 0.5 * x[p]

    def crossing(rng):
        prev = p
        for k in rng:
            if x[k] <= half:
                # linear interpolation between k and the previous index
                w = (x[prev] - half) / (x[prev] - x[k])
                return t[prev] + w * (t[k] - t[prev])
            prev = k
        return math.nan

    left = crossing(range(p - 1, -1, -1))
    right = crossing(range(p + 1, x.size))
    return right - left


def ramp_driver(start: float, horizon: float, rate: float, level: float = 0.0) -> TimeSeries:
    """Linear driver from ``level`` rising at ``rate`` per year over the horizon."""
    end = start + max(horizon, 1e-9)
    return TimeSeries((start, end), (level, level + rate * (end - start)))


def pulse_driver(start: float, end: float, corners, peak: float, level: float = 0.0) -> TimeSeries:
    """Trapezoidal excursion: baseline, rise, hold at ``level + peak``, fall, baseline.

    ``corners`` holds the four times (rise begins, peak reached, fall begins,
    baseline regained), all strictly inside (start, end).
    """
    pts = [start, *[float(c) for c in corners], end]
    if len(pts) != 6 or any(b <= a for a, b in zip(pts, pts[1:])):
        raise ValueError("pulse corners must be four increasing times strictly inside the run")
    top = level + peak
    return TimeSeries(tuple(pts), (level, level, top, top, level, level))


@dataclass
class LadderRun:
    ramp: float
    trajectory: Trajectory
    unimodal: dict[str, bool]
    peak_width: dict[str, float]
    peak_time: dict[str, float]


@dataclass
class LadderResult:
    ids: list[str]
    decline_bound: dict[str, float]
    runs: list[LadderRun] = field(default_factory=list)

    def run_for(self, ramp: float) -> LadderRun:
        for r in self.runs:
            if r.ramp == ramp:
                return r
        raise KeyError(ramp)


def check_ladder_order(scenario: Scenario) -> None:
    fleet = scenario.fleet
    alphas = fleet.efficiencies
    for a, b in zip(alphas, alphas[1:]):
        if not fleet.better(b, a):
            raise ValueError("ladder technologies must be listed from least to most efficient")


def ladder_experiment(scenario: Scenario, ramps) -> LadderResult:
    """Run the scenario once per driver ramp rate and grade the intermediate rungs.

    The decline bound for technology i is tau_i / k, the fastest possible
    e-folding of a disfavoured share.
    """
    check_ladder_order(scenario)
    if not isinstance(scenario.preference, CostModel):
        raise ValueError("the ladder needs a cost-based preference block so the driver acts")
    rs = scenario.run
    ids = scenario.ids
    bound = {i: float(tau) / rs.scale for i, tau in zip(ids, scenario.fleet.lifetimes)}
    result = LadderResult(ids, bound)
    for rate in ramps:
        sc = scenario.with_driver(ramp_driver(rs.start, rs.horizon, float(rate), scenario.driver(rs.start)))
        traj = run(sc)
        uni, width, when = {}, {}, {}
        for k, tid in enumerate(ids[1:-1], start=1):
            s = traj.shares[:, k]
            uni[tid] = is_unimodal(s)
            width[tid] = peak_width(traj.times, s)
            when[tid] = float(traj.times[int(np.argmax(s))])
        result.runs.append(LadderRun(float(rate), traj, uni, width, when))
    return result


@dataclass
class HysteresisResult:
    pulse: Trajectory
    control: Trajectory
    pulse_end: float
    metric: float
    raw_change: float
    improved: bool
    retired_stay_out: bool

    @property
    def forward(self) -> Trajectory:
        return _slice(self.pulse, self.pulse.times <= self.pulse_end)

    @property
    def back(self) -> Trajectory:
        return _slice(self.pulse, self.pulse.times >= self.pulse_end)


def _slice(traj: Trajectory, mask: np.ndarray) -> Trajectory:
    kw = {}
    for name, value in vars(traj).items():
        if name == "ids":
            kw[name] = value
        elif isinstance(value, list):
            kw[name] = [v for v, m in zip(value, mask) if m]
        else:
            kw[name] = value[mask]
    return Trajectory(**kw)


def _retired_stay_out(traj: Trajectory) -> bool:
    seen: set[str] = set()
    for r, names in enumerate(traj.retired):
        seen.update(n for n in names.split("|") if n)
        for tid in seen:
            if traj.share(tid)[r] != 0.0:
                return False
    return True


def hysteresis_experiment(scenario: Scenario, driver: TimeSeries, tol: float = 1e-6) -> HysteresisResult:
    """Run a driver excursion and a control at the baseline driver level.

    ``metric`` is the absolute gap between the final alpha_bar of the pulse
    run and of the control, so drift unrelated to the excursion cancels.
    ``raw_change`` is the plain end-minus-start gap of the pulse run.
    """
    rs = scenario.run
    base = driver(rs.start)
    if abs(driver(rs.end) - base) > 1e-12:
        raise ValueError("the driver path must return to its starting level")
    pulse = run(scenario.with_driver(driver))
    control = run(scenario.with_driver(TimeSeries.constant(base)))
    fleet = scenario.fleet
    if len(pulse) == 0:
        return HysteresisResult(pulse, control, rs.end, 0.0, 0.0, False, True)
    a_end = pulse.avg_efficiency[-1]
    a_start = pulse.avg_efficiency[0]
    metric = abs(a_end - control.avg_efficiency[-1])
    improved = fleet.better(a_end, a_start) and abs(a_end - a_start) > tol
    # the last time the driver is above baseline marks the end of the pulse
    samples = np.array([driver(t) for t in pulse.times])
    active = np.flatnonzero(np.abs(samples - base) > 1e-12)
    pulse_end = float(pulse.times[active[-1] + 1]) if active.size and active[-1] + 1 < len(pulse) else rs.end
    return HysteresisResult(pulse, control, pulse_end, float(metric), float(abs(a_end - a_start)), bool(improved),
                            _retired_stay_out(pulse))


@dataclass
class OracleResult:
    ids: list[str]
    report: DivergenceReport
    tallies: list  # year tallies of the first seed


def oracle_comparison(scenario: Scenario, seeds: int, granularity: float | None = None,
                      years: int | None = None, units: float = 1e4) -> OracleResult:
    """Seed-averaged unit simulation against the unscaled mean-field shares.

    Demand is held at its initial level and the preference matrix is the
    one at the start of the run. ``granularity`` defaults to the capacity
    that splits the initial total into ``units`` units. Seeds are the
    consecutive integers starting at the scenario seed.
    """
    if seeds < 1:
        raise ValueError("need at least one seed")
    rs = scenario.run
    fleet = scenario.fleet
    years = int(round(rs.horizon)) if years is None else int(years)
    u0 = scenario.initial_capacities
    gran = float(u0.sum()) / units if granularity is None else float(granularity)
    state = SystemState(rs.start, u0.copy())
    f = apply_driver(scenario.preference, scenario.driver, rs.start, fleet, scenario.initial_cumulative,
                     scenario.initial_cumulative)
    runs = []
    first = None
    for k in range(seeds):
        shares, tallies = run_micro(state, fleet, f, years, gran, rs.seed + k)
        runs.append(shares)
        if first is None:
            first = tallies
    mf = meanfield_yearly(state, fleet, f, years, scale=1.0)
    return OracleResult(scenario.ids, compare_meanfield(runs, mf), first)
