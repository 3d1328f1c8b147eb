"""Scenario files: TOML with technology, demand, driver, preference and constraint tables.

See ``docs/scenario-format.md`` for the full schema. Everything is validated
eagerly so a bad file fails at load time, naming the offending field.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..constraints import ConstraintError, MarketConstraint, violations
from ..core import DomainError, Fleet, Technology, TimeSeries
from ..dynamics import DEMAND_MODES, INTEGRATORS
from ..preference import CostModel, PreferenceError, PreferenceMatrix, validate

logger = logging.getLogger(__name__)

EQUATIONS = ("full", "simplified")


class ScenarioError(ValueError):
    """Schema violation; carries the dotted field path and, when found, the file line."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = ""
        if field:
            where = f" [{field}" + (f", line {line}" if line else "") + "]"
        super().__init__(message + where)


@dataclass(frozen=True)
class RunSettings:
    start: float = 0.0
    horizon: float = 50.0
    dt: float = 0.25
    scale: float = 10.0
    integrator: str = "euler"
    equation: str = "full"
    demand_mode: str = "preference"
    seed: int = 0
    retire_threshold: float = 1e-9
    retire_after: float = 5.0

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def end(self) -> float:
        return self.start + self.horizon


@dataclass(frozen=True)
class Scenario:
    name: str
    fleet: Fleet
    initial_capacities: np.ndarray
    demand: TimeSeries | None
    driver: TimeSeries
    preference: PreferenceMatrix | CostModel
    constraints: tuple[MarketConstraint, ...] = ()
    run: RunSettings = field(default_factory=RunSettings)
    initial_cumulative: np.ndarray | None = None

    @property
    def ids(self) -> list[str]:
        return self.fleet.ids

    def with_run(self, **changes) -> "Scenario":
        return replace(self, run=replace(self.run, **changes))

    def with_driver(self, driver: TimeSeries) -> "Scenario":
        return replace(self, driver=driver)


class _Locator:
    """Best-effort mapping from a dotted field path to a line of the source text."""

    def __init__(self, text: str):
        self.lines = text.splitlines()

    def line(self, path: str) -> int | None:
        parts = path.split(".")
        start = 0
        key = parts[-1]
        m = re.match(r"(\w+)\[(\d+)\]", parts[0])
        if m:
            table, idx = m.group(1), int(m.group(2))
            hits = [n for n, ln in enumerate(self.lines) if ln.strip() == f"[[{table}]]"]
            if idx < len(hits):
                start = hits[idx]
        elif len(parts) > 1:
            for n, ln in enumerate(self.lines):
                if ln.strip() == f"[{parts[0]}]":
                    start = n
                    break
        pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
        for n in range(start, len(self.lines)):
            if pat.match(self.lines[n]):
                return n + 1
        return start + 1 if start else None


class _Reader:
    def __init__(self, text: str):
        self.loc = _Locator(text)

    def fail(self, message: str, path: str) -> ScenarioError:
        return ScenarioError(message, path, self.loc.line(path))

    def get(self, table: dict, key: str, path: str, kind=float, default: Any = ..., choices=None):
        full = f"{path}.{key}" if path else key
        if key not in table:
            if default is ...:
                raise self.fail(f"missing required field {key!r}", full)
            return default
        value = table[key]
        try:
            if kind is float:
                if isinstance(value, bool):
                    raise TypeError
                value = float(value)
            elif kind is int:
                if isinstance(value, bool) or int(value) != value:
                    raise TypeError
                value = int(value)
            elif kind is str:
                if not isinstance(value, str):
                    raise TypeError
            elif kind is bool:
                if not isinstance(value, bool):
                    raise TypeError
        except (TypeError, ValueError):
            raise self.fail(f"field {key!r} must be of type {kind.__name__}, got {value!r}", full) from None
        if choices is not None and value not in choices:
            raise self.fail(f"field {key!r} must be one of {list(choices)}, got {value!r}", full)
        return value

    def vector(self, table, key, path, n, default: Any = ...):
        full = f"{path}.{key}" if path else key
        if key not in table:
            if default is ...:
                raise self.fail(f"missing required field {key!r}", full)
            return default
        value = table[key]
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return np.full(n, float(value))
        try:
            arr = np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            raise self.fail(f"field {key!r} must be numeric", full) from None
        if arr.shape != (n,):
            raise self.fail(f"field {key!r} needs {n} values, got {arr.size}", full)
        return arr

    def series(self, table, path) -> TimeSeries:
        years = table.get("years")
        values = table.get("values")
        if years is None or values is None:
            raise self.fail("a time series needs 'years' and 'values'", f"{path}.years")
        try:
            return TimeSeries(tuple(years), tuple(values))
        except (TypeError, ValueError) as exc:
            raise self.fail(str(exc), f"{path}.years") from None


def _parse_run(r: _Reader, raw: dict) -> RunSettings:
    t = raw.get("run", {})
    d = RunSettings()
    settings = RunSettings(
        start=r.get(t, "start", "run", float, d.start),
        horizon=r.get(t, "horizon", "run", float, d.horizon),
        dt=r.get(t, "dt", "run", float, d.dt),
        scale=r.get(t, "scale", "run", float, d.scale),
        integrator=r.get(t, "integrator", "run", str, d.integrator, INTEGRATORS),
        equation=r.get(t, "equation", "run", str, d.equation, EQUATIONS),
        demand_mode=r.get(t, "demand_mode", "run", str, d.demand_mode, DEMAND_MODES),
        seed=r.get(t, "seed", "run", int, d.seed),
        retire_threshold=r.get(t, "retire_threshold", "run", float, d.retire_threshold),
        retire_after=r.get(t, "retire_after", "run", float, d.retire_after),
    )
    if not settings.dt > 0:
        raise r.fail("dt must be positive", "run.dt")
    if settings.horizon < 0:
        raise r.fail("horizon must be non-negative", "run.horizon")
    if not settings.scale > 0:
        raise r.fail("scale must be positive", "run.scale")
    if settings.horizon > 0 and abs(settings.steps * settings.dt - settings.horizon) > 1e-9 * settings.horizon:
        raise r.fail("horizon must be a whole number of steps", "run.horizon")
    return settings


def _parse_preference(r: _Reader, raw: dict, fleet: Fleet) -> PreferenceMatrix | CostModel:
    t = raw.get("preference")
    n = len(fleet)
    if t is None:
        raise r.fail("missing [preference] table", "preference")
    has_matrix = "matrix" in t
    cost_keys = {"spread", "sensitivity", "learning", "kernel"} & set(t)
    mode = r.get(t, "mode", "preference", str, "matrix" if has_matrix else "costs", ("matrix", "costs"))
    if has_matrix and (cost_keys or mode == "costs"):
        raise r.fail("give either an explicit matrix or a cost block, not both", "preference.matrix")
    if mode == "matrix":
        try:
            values = np.asarray(t["matrix"], dtype=float)
        except KeyError:
            raise r.fail("missing 'matrix' for mode = \"matrix\"", "preference.matrix") from None
        except (TypeError, ValueError):
            raise r.fail("matrix must be an N x N numeric array", "preference.matrix") from None
        if values.shape != (n, n):
            raise r.fail(f"matrix must be {n} x {n}, got shape {values.shape}", "preference.matrix")
        report = validate(values)
        if not report:
            raise PreferenceError(f"preference matrix violates exclusivity: {report.describe()}")
        return PreferenceMatrix(values)
    learning = r.vector(t, "learning", "preference", n, None)
    try:
        return CostModel(
            means=fleet.base_costs,
            spreads=r.vector(t, "spread", "preference", n),
            sensitivity=r.vector(t, "sensitivity", "preference", n, np.ones(n)),
            learning=learning,
            kernel=r.get(t, "kernel", "preference", str, "normal", ("normal", "logistic")),
        )
    except PreferenceError as exc:
        raise r.fail(str(exc), "preference") from None


def _parse_constraint(r: _Reader, t: dict, k: int, n: int) -> MarketConstraint:
    path = f"constraint[{k}]"
    coeffs = r.vector(t, "coefficients", path, n)
    raw_bound = t.get("bound")
    if raw_bound is None:
        raise r.fail("missing required field 'bound'", f"{path}.bound")
    bound = r.series(raw_bound, f"{path}.bound") if isinstance(raw_bound, dict) else r.get(t, "bound", path)
    try:
        return MarketConstraint(
            name=r.get(t, "name", path, str, f"constraint{k + 1}"),
            coefficients=tuple(int(a) for a in coeffs),
            bound=bound,
            sign=r.get(t, "sign", path, str, "upper", ("upper", "lower")),
            kind=r.get(t, "kind", path, str, "capacity", ("capacity", "demand")),
            width=r.get(t, "width", path, float, 0.05),
        )
    except ConstraintError as exc:
        raise r.fail(str(exc), f"{path}.coefficients") from None


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ScenarioError(f"not valid TOML: {exc}", "<file>", int(m.group(1)) if m else None) from None
    r = _Reader(text)
    run = _parse_run(r, raw)
    name = r.get(raw, "name", "", str, name)
    intensity = r.get(raw, "efficiency_convention", "", str, "intensity", ("intensity", "efficiency")) == "intensity"

    tech_tables = raw.get("technology")
    if not isinstance(tech_tables, list) or not tech_tables:
        raise ScenarioError("at least one [[technology]] table is required", "technology")
    techs = []
    caps = []
    for k, t in enumerate(tech_tables):
        path = f"technology[{k}]"
        try:
            techs.append(
                Technology(
                    id=r.get(t, "id", path, str),
                    lifetime=r.get(t, "lifetime", path),
                    lead_time=r.get(t, "lead_time", path),
                    capacity_factor=r.get(t, "capacity_factor", path, float, 1.0),
                    efficiency=r.get(t, "efficiency", path, float, 1.0),
                    base_cost=r.get(t, "cost", path, float, 1.0),
                )
            )
        except DomainError as exc:
            raise r.fail(str(exc), f"{path}.lifetime") from None
        cap = r.get(t, "initial_capacity", path)
        if cap < 0:
            raise r.fail("initial capacity must be non-negative", f"{path}.initial_capacity")
        caps.append(cap)
    try:
        fleet = Fleet(tuple(techs), intensity=intensity)
    except DomainError as exc:
        raise ScenarioError(str(exc), "technology") from None
    n = len(fleet)
    u0 = np.array(caps, float)
    if not u0.sum() > 0:
        raise r.fail("total initial capacity must be positive", "technology[0].initial_capacity")

    demand = None
    if "demand" in raw:
        demand = r.series(raw["demand"], "demand")
        if not demand.covers(run.start, run.end):
            raise r.fail(
                f"demand table spans {demand.years[0]:g}-{demand.years[-1]:g} but the run needs "
                f"{run.start:g}-{run.end:g}",
                "demand.years",
            )
        if min(demand.values) <= 0:
            raise r.fail("demand must be positive", "demand.values")
    driver = TimeSeries.constant(0.0)
    if "driver" in raw:
        driver = r.series(raw["driver"], "driver")
        if not driver.covers(run.start, run.end):
            raise r.fail("driver table does not cover the run horizon", "driver.years")

    preference = _parse_preference(r, raw, fleet)
    constraints = tuple(_parse_constraint(r, t, k, n) for k, t in enumerate(raw.get("constraint", [])))
    if constraints and run.equation == "simplified":
        raise r.fail("market constraints need the full equation", "run.equation")

    if demand is not None:
        served = float(np.dot(fleet.capacity_factors, u0))
        target = demand(run.start)
        if abs(served - target) > 1e-9 * target:
            logger.info("rescaling initial capacities by %.6g to serve the initial demand", target / served)
            u0 = u0 * (target / served)

    if constraints:
        bad = violations(u0 / u0.sum(), fleet, constraints, run.start)
        if bad:
            raise ConstraintError(f"initial state violates constraints: {', '.join(bad)}")

    cumulative = None
    if isinstance(preference, CostModel) and preference.learning_on:
        cumulative = r.vector(raw.get("preference", {}), "initial_cumulative", "preference", n, u0.copy())
        if np.any(cumulative <= 0):
            raise r.fail("initial cumulative capacity must be positive for learning", "preference.initial_cumulative")
    return Scenario(name, fleet, u0, demand, driver, preference, constraints, run, cumulative)


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc}", "<file>") from None
    return parse_scenario(text, p.stem)
