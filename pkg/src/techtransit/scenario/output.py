"""Delimited text output of trajectories: a wide table or a plot-ready long table."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .runner import Trajectory

FORMATS = ("csv", "long")
_AGGREGATES = ("avg_capacity_factor", "avg_lifetime", "avg_lead_time", "avg_efficiency")
_DIAGNOSTICS = ("ceiling", "floor", "unmet", "clipped", "approx_error")


def fmt(x: float) -> str:
    return "%.12g" % x


def columns(ids: list[str]) -> list[str]:
    cols = ["time", "demand", "driver"]
    for prefix in ("U", "S", "sigma"):
        cols += [f"{prefix}_{i}" for i in ids]
    return cols + list(_AGGREGATES) + ["binding", "retired"] + list(_DIAGNOSTICS)


def _wide_rows(traj: Trajectory):
    for r in range(len(traj)):
        row = [fmt(traj.times[r]), fmt(traj.demand[r]), fmt(traj.driver[r])]
        for block in (traj.capacities, traj.shares, traj.market_shares):
            row += [fmt(v) for v in block[r]]
        row += [fmt(getattr(traj, a)[r]) for a in _AGGREGATES]
        row += [traj.binding[r], traj.retired[r]]
        row += [str(int(traj.ceiling[r])), str(int(traj.floor[r])), fmt(traj.unmet[r]),
                str(int(traj.clipped[r])), fmt(traj.approx_error[r])]
        yield row


def _long_rows(traj: Trajectory):
    for r in range(len(traj)):
        t = fmt(traj.times[r])
        for name, block in (("capacity", traj.capacities), ("share", traj.shares),
                            ("market_share", traj.market_shares)):
            for tid, v in zip(traj.ids, block[r]):
                yield [t, name, tid, fmt(v)]
        for name in ("demand", "driver") + _AGGREGATES:
            yield [t, name, "", fmt(getattr(traj, name)[r])]


def render(traj: Trajectory, format: str = "csv") -> str:
    """Text of the table. ``long`` has columns time, variable, tech, value."""
    if format not in FORMATS:
        raise ValueError(f"unknown output format {format!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if format == "csv":
        w.writerow(columns(traj.ids))
        w.writerows(_wide_rows(traj))
    else:
        w.writerow(["time", "variable", "tech", "value"])
        w.writerows(_long_rows(traj))
    return buf.getvalue()


def emit(traj: Trajectory, path: str | Path | None = None, format: str = "csv") -> str:
    """Write the table to ``path`` (if given) and return the text."""
    text = render(traj, format)
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def read_table(source: str | Path) -> dict[str, np.ndarray]:
    """Parse a wide table back into columns; text columns stay as string arrays."""
    text = Path(source).read_text() if not str(source).count("\n") else str(source)
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    rows = list(reader)
    out = {}
    for k, name in enumerate(header):
        vals = [r[k] for r in rows]
        if name in ("binding", "retired"):
            out[name] = np.array(vals, dtype=str)
        else:
            out[name] = np.array([float(v) for v in vals], dtype=float)
    return out
