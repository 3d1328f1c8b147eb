"""Pairwise investor-choice matrix F_ij.

F_ij is the probability that, in a pairwise comparison, technology i is
picked over technology j. Matrices are either supplied verbatim or built
from perceived-cost comparisons under a policy driver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, ndtr

from .core import Fleet, TimeSeries

EXCLUSIVITY_TOL = 1e-9


class PreferenceError(ValueError):
    pass


@dataclass(frozen=True)
class PreferenceMatrix:
    values: np.ndarray

    def __post_init__(self) -> None:
        f = np.array(self.values, dtype=float)
        if f.ndim != 2 or f.shape[0] != f.shape[1]:
            raise PreferenceError(f"preference matrix must be square, got shape {f.shape}")
        f.setflags(write=False)
        object.__setattr__(self, "values", f)

    @classmethod
    def indifferent(cls, n: int) -> "PreferenceMatrix":
        return cls(np.full((n, n), 0.5))

    @classmethod
    def from_upper(cls, upper: Sequence[Sequence[float]] | np.ndarray) -> "PreferenceMatrix":
        """Complete a matrix from its strict upper triangle so F_ji = 1 - F_ij exactly."""
        u = np.asarray(upper, dtype=float)
        n = u.shape[0]
        f = np.full((n, n), 0.5)
        iu = np.triu_indices(n, 1)
        f[iu] = u[iu]
        f[(iu[1], iu[0])] = 1.0 - u[iu]
        return cls(f)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass
class ValidationReport:
    ok: bool
    violations: list[tuple[int, int, str]] = field(default_factory=list)
    total: float = float("nan")

    def __bool__(self) -> bool:
        return self.ok

    def describe(self) -> str:
        if self.ok:
            return "ok"
        lines = [f"({i + 1},{j + 1}): {why}" for i, j, why in self.violations]
        return "; ".join(lines)


def validate(f: PreferenceMatrix | np.ndarray, tol: float = EXCLUSIVITY_TOL) -> ValidationReport:
    """Check range, exclusivity F_ij + F_ji = 1 and F_ii = 1/2; cells are reported 1-based."""
    values = f.values if isinstance(f, PreferenceMatrix) else np.asarray(f, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise PreferenceError(f"preference matrix must be square, got shape {values.shape}")
    n = values.shape[0]
    violations = []
    for i in range(n):
        if abs(values[i, i] - 0.5) > tol:
            violations.append((i, i, f"diagonal {values[i, i]:g} != 0.5"))
        for j in range(n):
            v = values[i, j]
            if not (0.0 <= v <= 1.0):
                violations.append((i, j, f"value {v:g} outside [0, 1]"))
            if j > i and abs(v + values[j, i] - 1.0) > tol:
                violations.append((i, j, f"F_ij + F_ji = {v + values[j, i]:g} != 1"))
    total = float(values.sum())
    if not violations and abs(total - n * n / 2) > tol * max(1, n * n):
        violations.append((-1, -1, f"sum {total:g} != N^2/2"))
    return ValidationReport(ok=not violations, violations=violations, total=total)


@dataclass(frozen=True)
class CostModel:
    """Perceived-cost distributions per technology.

    ``sensitivity`` is the cost added per unit of driver per unit of
    inefficiency. ``learning`` > 0 switches on an experience curve: the
    mean cost is scaled by (W/W0)^-learning as cumulative capacity W grows.
    """

    means: np.ndarray
    spreads: np.ndarray
    sensitivity: np.ndarray
    learning: np.ndarray | None = None
    kernel: str = "normal"

    def __post_init__(self) -> None:
        means = np.array(self.means, dtype=float)
        n = means.size
        spreads = np.broadcast_to(np.asarray(self.spreads, dtype=float), (n,)).copy()
        sens = np.broadcast_to(np.asarray(self.sensitivity, dtype=float), (n,)).copy()
        if np.any(means <= 0):
            raise PreferenceError("cost means must be positive")
        if np.any(spreads < 0):
            raise PreferenceError("cost spreads must be non-negative")
        if self.kernel not in ("normal", "logistic"):
            raise PreferenceError(f"unknown choice kernel {self.kernel!r}")
        learning = None
        if self.learning is not None:
            learning = np.broadcast_to(np.asarray(self.learning, dtype=float), (n,)).copy()
            if np.any(learning < 0):
                raise PreferenceError("learning exponents must be non-negative")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "spreads", spreads)
        object.__setattr__(self, "sensitivity", sens)
        object.__setattr__(self, "learning", learning)

    @property
    def learning_on(self) -> bool:
        return self.learning is not None and bool(np.any(self.learning > 0))


def effective_costs(
    costs: CostModel,
    driver: float,
    techs: Fleet,
    cumulative: np.ndarray | None = None,
    initial_cumulative: np.ndarray | None = None,
) -> np.ndarray:
    means = costs.means
    if costs.learning_on and cumulative is not None and initial_cumulative is not None:
        ratio = np.asarray(cumulative, float) / np.asarray(initial_cumulative, float)
        means = means * np.power(np.maximum(ratio, 1.0), -costs.learning)
    return means + driver * costs.sensitivity * techs.intensities


def from_costs(
    costs: CostModel,
    driver: float,
    techs: Fleet,
    cumulative: np.ndarray | None = None,
    initial_cumulative: np.ndarray | None = None,
) -> PreferenceMatrix:
    """F_ij = P(perceived cost of i < perceived cost of j)."""
    mu = effective_costs(costs, driver, techs, cumulative, initial_cumulative)
    n = mu.size
    gap = mu[None, :] - mu[:, None]  # mu_j - mu_i
    scale = np.sqrt(costs.spreads[:, None] ** 2 + costs.spreads[None, :] ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = gap / scale
    if costs.kernel == "normal":
        prob = ndtr(z)
    else:
        # logistic with the same variance as the normal difference
        prob = expit(z * np.pi / np.sqrt(3.0))
    degenerate = scale == 0
    prob = np.where(degenerate, np.where(gap > 0, 1.0, np.where(gap < 0, 0.0, 0.5)), prob)
    upper = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    upper[iu] = prob[iu]
    return PreferenceMatrix.from_upper(upper)


def apply_driver(
    source: PreferenceMatrix | CostModel,
    driver: TimeSeries | float,
    time: float,
    techs: Fleet,
    cumulative: np.ndarray | None = None,
    initial_cumulative: np.ndarray | None = None,
) -> PreferenceMatrix:
    """Preference matrix at ``time``; an explicit matrix is returned unchanged."""
    if isinstance(source, PreferenceMatrix):
        return source
    level = driver(time) if callable(driver) else float(driver)
    return from_costs(source, level, techs, cumulative, initial_cumulative)
