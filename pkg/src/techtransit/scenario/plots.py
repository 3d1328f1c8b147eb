"""Figures for the report path, rendered off-screen to image files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .runner import Trajectory  # noqa: E402


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated renders identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_trajectory(traj: Trajectory, outdir: str | Path, stem: str) -> list[Path]:
    """Stacked capacity shares and the average efficiency, one file each."""
    out = Path(outdir)
    written = []
    fig, ax = plt.subplots(figsize=(7, 4))
    if len(traj):
        ax.stackplot(traj.times, traj.shares.T, labels=traj.ids)
        ax.set_xlim(traj.times[0], traj.times[-1])
    ax.set_ylim(0, 1)
    ax.set_xlabel("year")
    ax.set_ylabel("capacity share")
    ax.legend(loc="upper left", fontsize="small", ncol=min(len(traj.ids), 6))
    written.append(_save(fig, out / f"{stem}_shares.png"))

    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(traj.times, traj.avg_efficiency, color="k")
    ax.set_xlabel("year")
    ax.set_ylabel("average efficiency")
    written.append(_save(fig, out / f"{stem}_efficiency.png"))
    return written


def plot_ladder(result, outdir: str | Path, stem: str = "ladder") -> list[Path]:
    """One panel of share curves per ramp rate."""
    runs = result.runs
    fig, axes = plt.subplots(len(runs), 1, figsize=(7, 2.4 * max(len(runs), 1)), sharex=True, squeeze=False)
    for ax, r in zip(axes[:, 0], runs):
        for k, tid in enumerate(result.ids):
            ax.plot(r.trajectory.times, r.trajectory.shares[:, k], label=tid)
        ax.set_ylabel("share")
        ax.set_title(f"driver ramp {r.ramp:g} per year", fontsize="small")
    axes[0, 0].legend(fontsize="small", ncol=len(result.ids))
    axes[-1, 0].set_xlabel("year")
    return [_save(fig, Path(outdir) / f"{stem}.png")]


def plot_hysteresis(result, outdir: str | Path, stem: str = "hysteresis") -> list[Path]:
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    top.plot(result.pulse.times, result.pulse.driver, color="k")
    top.set_ylabel("driver")
    bottom.plot(result.pulse.times, result.pulse.avg_efficiency, label="pulse")
    bottom.plot(result.control.times, result.control.avg_efficiency, "--", label="control")
    bottom.axvline(result.pulse_end, color="grey", lw=0.8)
    bottom.set_ylabel("average efficiency")
    bottom.set_xlabel("year")
    bottom.legend(fontsize="small")
    return [_save(fig, Path(outdir) / f"{stem}.png")]


def plot_oracle(report, ids, outdir: str | Path, stem: str = "oracle") -> list[Path]:
    """Seed-mean micro shares with 95% bands against the mean-field curves."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for k, tid in enumerate(ids):
        line, = ax.plot(report.years, report.meanfield[:, k], label=f"{tid} mean field")
        ax.errorbar(report.years, report.mean[:, k], yerr=report.ci_half_width[:, k], fmt=".",
                    color=line.get_color(), ms=3, lw=0.8)
    ax.set_xlabel("year")
    ax.set_ylabel("share")
    ax.legend(fontsize="small")
    return [_save(fig, Path(outdir) / f"{stem}.png")]
