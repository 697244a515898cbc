"""Figures for experiment tables. Rendering only; the numbers live in the CSVs."""
import logging
from pathlib import Path
from typing import Callable, Dict, List, Mapping

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .errors import ExportError, FitError  # noqa: E402

logger = logging.getLogger(__name__)

DPI = 150


def _save(fig, path: Path) -> Path:
    try:
        fig.savefig(path, dpi=DPI, bbox_inches="tight")
    except OSError as e:
        raise ExportError(f"Cannot write plot: {e}", str(path)) from e
    finally:
        plt.close(fig)
    return path


def plot_gated_sweep(df: pd.DataFrame, path: Path) -> Path:
    """Gated fraction per software block, one line per buffer size, one panel per preset."""
    presets = sorted(df["preset_id"].unique())
    fig, axes = plt.subplots(len(presets), 1, figsize=(8, 2.6 * len(presets)), squeeze=False)
    for ax, preset_id in zip(axes[:, 0], presets):
        sub = df[df["preset_id"] == preset_id]
        baseline = sub[sub["sw_first"].isna()]
        blocks = sub.dropna(subset=["sw_first"])
        for buffer_items, group in blocks.groupby("buffer_items"):
            group = group.sort_values("sw_first")
            ax.plot(group["block"], group["gated_fraction"], marker="o", label=f"B={buffer_items}")
        if not baseline.empty:
            ax.axhline(float(baseline["gated_fraction"].iloc[0]), color="grey", linestyle="--", label="hardware")
        ax.set_title(f"Preset {preset_id}")
        ax.set_ylabel("clock gated")
        ax.set_ylim(0, 1)
        ax.legend(fontsize="small")
    return _save(fig, path)


def plot_rate_profiles(df: pd.DataFrame, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(8, 4))
    for preset_id, group in df.groupby("preset_id"):
        group = group.sort_values("boundary")
        ax.plot(group["boundary"], group["bits_per_s"], marker="o", label=f"{preset_id}: {group['label'].iloc[0]}")
    ax.set_yscale("log")
    ax.set_xlabel("pipeline boundary")
    ax.set_ylabel("bits/s")
    ax.legend(fontsize="small")
    return _save(fig, path)


def plot_min_buffer(df: pd.DataFrame, path: Path) -> Path:
    """Minimum buffer against intervention rate on log-log axes, with the fitted power law."""
    from .experiments import fit_min_buffer_table

    usable = df.dropna(subset=["min_buffer"])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(usable["boundary_rate"], usable["min_buffer"], alpha=0.7)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("intervention rate (items/s)")
    ax.set_ylabel("minimum buffer (items)")
    try:
        fit = fit_min_buffer_table(df)
    except FitError as e:
        logger.debug(f"No fit line: {e}")
    else:
        xs = np.geomspace(usable["boundary_rate"].min(), usable["boundary_rate"].max(), 50)
        ax.plot(xs, fit.k * xs**fit.m, color="red", label=f"k={fit.k:.3g}, m={fit.m:.3f}, r2={fit.r2:.3f}")
        ax.legend(fontsize="small")
    return _save(fig, path)


def plot_retrofit(df: pd.DataFrame, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, group in df.groupby("modulation"):
        group = group.sort_values("buffer_items")
        ax.plot(group["buffer_items"], group["gated_fraction"], marker="o", label=f"{label} retrofit")
        ax.axhline(float(group["baseline_gated"].iloc[0]), linestyle="--", alpha=0.5)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("buffer (items)")
    ax.set_ylabel("clock gated")
    ax.legend(fontsize="small")
    return _save(fig, path)


def plot_phases(df: pd.DataFrame, path: Path) -> Path:
    pivot = df.pivot(index="modulation", columns="phase", values="fraction").fillna(0.0)
    fig, ax = plt.subplots(figsize=(6, 4))
    pivot.plot.bar(stacked=True, ax=ax)
    ax.set_ylabel("fraction of cycles")
    ax.legend(fontsize="small", bbox_to_anchor=(1.0, 1.0))
    return _save(fig, path)


PLOTTERS: Dict[str, Callable[[pd.DataFrame, Path], Path]] = {
    "sweep": plot_gated_sweep,
    "rates": plot_rate_profiles,
    "min_buffer": plot_min_buffer,
    "retrofit": plot_retrofit,
    "phases": plot_phases,
}


def render_tables(tables: Mapping[str, pd.DataFrame], out_dir: Path) -> List[Path]:
    paths = []
    for name, df in tables.items():
        plotter = PLOTTERS.get(name)
        if plotter is None:
            continue
        paths.append(plotter(df, Path(out_dir) / f"{name}.png"))
        logger.debug(f"Rendered {paths[-1]}")
    return paths
