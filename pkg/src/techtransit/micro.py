"""Unit-level stochastic simulation of the bidding and decommissioning process.

Every unit of capacity is tracked with its type and age. Once a year:

1. all units age by one year and those past their lifetime retire (see
   ``age_model`` in ``simulate_year`` for how ages are kept);
2. each technology puts forward construction bids in proportion to
   U_i / t_i (its building capacity), forming a shared bid pool;
3. when demand falls, some retirements are not replaced: a retiring unit
   of type i is dropped when a randomly chosen comparator j is preferred
   (probability F_ji), until the decline is met or retirements run out;
4. every remaining retirement of type j takes the next bid i from the pool;
   if i differs from j the investor accepts it with probability F_ij,
   otherwise the unit is replaced by its own type;
5. when demand rises, extra bids are drawn against random comparators and
   accepted with F_ij until the increase is built or the pool is empty.

In expectation one year of this process equals one explicit step (dt = 1)
of the mean-field capacity equations with scale factor 1.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .core import Fleet, SystemState, as_fleet
from .preference import PreferenceMatrix


AGE_MODELS = ("uniform", "cohort")


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator so streams are reproducible across platforms."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class UnitPopulation:
    types: np.ndarray
    ages: np.ndarray
    n_tech: int
    granularity: float
    seed: int
    rng: np.random.Generator = field(repr=False)
    year: int = 0

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.types, minlength=self.n_tech)

    @property
    def capacities(self) -> np.ndarray:
        return self.counts * self.granularity

    @property
    def shares(self) -> np.ndarray:
        c = self.counts
        return c / c.sum()

    def ages_by_tech(self) -> list[np.ndarray]:
        return [np.sort(self.ages[self.types == i]) for i in range(self.n_tech)]


@dataclass
class YearTally:
    year: int
    units: np.ndarray
    retirements: np.ndarray
    builds: np.ndarray
    flows: np.ndarray  # flows[i, j]: retiring j units replaced by i
    decommissioned: np.ndarray
    unmet_decline: int = 0
    unmet_growth: int = 0
    bids: np.ndarray | None = None


def init_population(state: SystemState, techs, granularity: float, seed: int) -> UnitPopulation:
    """Round capacities to whole units and draw ages uniformly on [0, lifetime)."""
    if not granularity > 0:
        raise ValueError("granularity must be positive")
    fleet = as_fleet(techs)
    rng = make_rng(seed)
    counts = np.rint(state.capacities / granularity).astype(np.int64)
    types = np.repeat(np.arange(len(fleet)), counts)
    ages = rng.uniform(0.0, 1.0, types.size) * fleet.lifetimes[types]
    return UnitPopulation(types, ages, len(fleet), granularity, seed, rng)


def _stochastic_round(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    base = np.floor(x)
    return (base + (rng.random(x.size) < x - base)).astype(np.int64)


def simulate_year(
    pop: UnitPopulation,
    techs,
    F,
    demand_change: int = 0,
    redraws: int = 0,
    age_model: str = "uniform",
) -> tuple[UnitPopulation, YearTally]:
    """Advance the population by one year; ``demand_change`` is in units (may be negative).

    ``age_model="uniform"`` redraws every unit's age on [0, lifetime) at the
    start of the year, so each technology keeps the uniform construction
    history the mean-field retirement rate U_i / tau_i assumes.
    ``"cohort"`` tracks ages literally; a technology that has been growing
    then has a young fleet and retires less than U_i / tau_i.

    ``redraws`` lets a retirement whose drawn bid was rejected try further
    bids before falling back to self-replacement. Any value above zero
    inflates the exchange rates relative to the mean-field equations.
    """
    if age_model not in AGE_MODELS:
        raise ValueError(f"unknown age model {age_model!r}")
    fleet = as_fleet(techs)
    f = F.values if isinstance(F, PreferenceMatrix) else np.asarray(F, float)
    rng = pop.rng
    n = pop.n_tech
    tau = fleet.lifetimes
    types = pop.types
    if age_model == "uniform":
        ages = rng.uniform(0.0, 1.0, types.size) * tau[types] + 1.0
    else:
        ages = pop.ages + 1.0

    retiring = ages >= tau[types]
    keep = ~retiring
    ret_types = types[retiring]
    # time since the retiree's end of life = age of its replacement at year end
    ret_rem = ages[retiring] - tau[ret_types]
    retirements = np.bincount(ret_types, minlength=n)

    counts = pop.counts
    bids = _stochastic_round(counts / fleet.lead_times, rng)
    pool = rng.permutation(np.repeat(np.arange(n), bids))
    cursor = 0

    # retirements in random order
    order = rng.permutation(ret_types.size)
    ret_types = ret_types[order]
    ret_rem = ret_rem[order]

    decommissioned = np.zeros(n, np.int64)
    unmet_decline = 0
    replace_mask = np.ones(ret_types.size, bool)
    if demand_change < 0:
        need = -demand_change
        comparators = rng.integers(0, n, ret_types.size)
        drop = rng.random(ret_types.size) < f[comparators, ret_types]
        idx = np.flatnonzero(drop)[:need]
        replace_mask[idx] = False
        decommissioned = np.bincount(ret_types[idx], minlength=n)
        unmet_decline = need - idx.size

    repl_from = ret_types[replace_mask]
    repl_rem = ret_rem[replace_mask]
    new_types = repl_from.copy()
    pending = np.arange(repl_from.size)
    for _ in range(redraws + 1):
        if pending.size == 0 or cursor >= pool.size:
            break
        take = min(pending.size, pool.size - cursor)
        cand = pool[cursor:cursor + take]
        cursor += take
        who = pending[:take]
        src = repl_from[who]
        accept = (cand != src) & (rng.random(take) < f[cand, src])
        new_types[who[accept]] = cand[accept]
        resolved = accept | (cand == src)
        pending = np.concatenate([who[~resolved], pending[take:]])

    flows = np.zeros((n, n), np.int64)
    np.add.at(flows, (new_types, repl_from), 1)
    np.fill_diagonal(flows, 0)

    grown_types = np.empty(0, np.int64)
    unmet_growth = 0
    if demand_change > 0:
        built = []
        need = demand_change
        while need > 0 and cursor < pool.size:
            take = min(max(2 * need, 16), pool.size - cursor)
            cand = pool[cursor:cursor + take]
            cursor += take
            comparators = rng.integers(0, n, take)
            ok = cand[rng.random(take) < f[cand, comparators]][:need]
            built.append(ok)
            need -= ok.size
        grown_types = np.concatenate(built) if built else grown_types
        unmet_growth = need

    out_types = np.concatenate([types[keep], new_types, grown_types])
    out_ages = np.concatenate([ages[keep], repl_rem, rng.random(grown_types.size)])
    builds = np.bincount(new_types, minlength=n) + np.bincount(grown_types, minlength=n)
    new_pop = UnitPopulation(out_types, out_ages, n, pop.granularity, pop.seed, rng, pop.year + 1)
    tally = YearTally(
        year=pop.year + 1,
        units=new_pop.counts,
        retirements=retirements,
        builds=builds,
        flows=flows,
        decommissioned=decommissioned,
        unmet_decline=int(unmet_decline),
        unmet_growth=int(unmet_growth),
        bids=bids,
    )
    return new_pop, tally


def run_micro(
    state: SystemState,
    techs,
    F,
    years: int,
    granularity: float = 1.0,
    seed: int = 0,
    demand_changes=None,
    redraws: int = 0,
    age_model: str = "uniform",
) -> tuple[np.ndarray, list[YearTally]]:
    """Simulate ``years`` annual epochs; returns shares[years + 1, N] and the tallies."""
    pop = init_population(state, techs, granularity, seed)
    out = np.empty((years + 1, pop.n_tech))
    out[0] = pop.shares
    tallies = []
    for y in range(years):
        dc = 0 if demand_changes is None else int(demand_changes[y])
        pop, tally = simulate_year(pop, techs, F, dc, redraws, age_model)
        out[y + 1] = pop.shares
        tallies.append(tally)
    return out, tallies


@dataclass
class DivergenceReport:
    years: np.ndarray
    mean: np.ndarray
    ci_half_width: np.ndarray
    meanfield: np.ndarray
    max_abs_diff: float
    n_runs: int

    @property
    def abs_diff(self) -> np.ndarray:
        return np.abs(self.mean - self.meanfield)


def compare_meanfield(runs, meanfield: np.ndarray, horizon: int | None = None) -> DivergenceReport:
    """Seed-averaged micro shares against a mean-field trajectory sampled yearly.

    ``runs`` is a sequence of share arrays [years + 1, N]; the confidence
    interval is the normal 95% half width of the seed mean.
    """
    stack = np.asarray(runs, float)
    if stack.ndim != 3:
        raise ValueError("runs must be a sequence of [years, N] share arrays")
    years = stack.shape[1] - 1 if horizon is None else int(horizon)
    stack = stack[:, : years + 1]
    mf = np.asarray(meanfield, float)[: years + 1]
    mean = stack.mean(axis=0)
    if stack.shape[0] > 1:
        ci = 1.96 * stack.std(axis=0, ddof=1) / np.sqrt(stack.shape[0])
    else:
        ci = np.zeros_like(mean)
    diff = float(np.abs(mean - mf).max())
    return DivergenceReport(np.arange(years + 1), mean, ci, mf, diff, stack.shape[0])


def meanfield_yearly(state: SystemState, techs, F, years: int, scale: float = 1.0, dt: float = 1.0) -> np.ndarray:
    """Mean-field shares at integer years, matching the micro epoch (constant capacity)."""
    from .dynamics import step_simplified

    steps = int(round(1.0 / dt))
    s = state.shares
    out = [s]
    for _ in range(years):
        for _ in range(steps):
            s = step_simplified(s, techs, F, scale, dt)
        out.append(s)
    return np.array(out)


def tally_table(tallies: list[YearTally], ids: list[str]) -> str:
    """Tabular text: one row per (year, technology) with per-pair inflows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["year", "tech", "units", "retirements", "builds", "decommissioned"] + [f"from_{j}" for j in ids])
    for t in tallies:
        for i, tid in enumerate(ids):
            w.writerow([t.year, tid, int(t.units[i]), int(t.retirements[i]), int(t.builds[i]),
                        int(t.decommissioned[i])] + [int(x) for x in t.flows[i]])
    return buf.getvalue()
