"""Figure builders: time series, field heatmaps, sweep phase diagrams.

Figures are regenerated deterministically from the same inputs: fixed style,
fixed size, no timestamps or software tags in the output file.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .io import FormatError, numeric_column, read_snapshot, read_table

plt.rcParams.update({
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 120,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
})

# stable verdict -> color mapping for phase diagrams
VERDICT_STYLE = {
    "Bounded": ("tab:blue", "o"),
    "Growing": ("tab:red", "^"),
    "Inconclusive": ("tab:gray", "x"),
}

_SAVE_KW = {"metadata": {"Software": None}}


def _finish(fig, out_path):
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)


def plot_timeseries(csv_path, columns, out_path, logy=False):
    """Plot selected diagnostics columns against time."""
    header, table = read_table(csv_path)
    if "t" not in table:
        raise FormatError(f"{csv_path}: diagnostics file has no 't' column")
    t = numeric_column(table, "t", csv_path)
    fig, ax = plt.subplots()
    for name in columns:
        y = numeric_column(table, name, csv_path)
        if logy:
            y = np.maximum(y, 1e-300)
        ax.plot(t, y, label=name, linewidth=1.2)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.legend(loc="best")
    fig.tight_layout()
    _finish(fig, out_path)


def plot_field(snapshot_path, out_path):
    """Render a snapshot: line for 1D, heatmap for 2D, middle z-slice for 3D."""
    dim, counts, values = read_snapshot(snapshot_path)
    fig, ax = plt.subplots()
    if dim == 1:
        ax.plot(np.arange(counts[0]), values, linewidth=1.2)
        ax.set_xlabel("cell index")
        ax.set_ylabel("value")
    else:
        if dim == 3:
            values = values[:, :, counts[2] // 2]
        im = ax.imshow(values.T, origin="lower", aspect="equal",
                       interpolation="nearest", cmap="viridis")
        fig.colorbar(im, ax=ax, shrink=0.85)
        ax.set_xlabel("i")
        ax.set_ylabel("j")
        if dim == 3:
            ax.set_title(f"middle z-slice (k={counts[2] // 2})")
    fig.tight_layout()
    _finish(fig, out_path)


def plot_phase(csv_path, x, y, out_path):
    """Scatter sweep results colored by verdict.

    When the axes are a motility decay rate and an initial mass, the critical
    curve mass = 4*pi/chi is overlaid for reference.
    """
    header, table = read_table(csv_path)
    if "verdict" not in table:
        raise FormatError(f"{csv_path}: sweep file has no 'verdict' column")
    xs = numeric_column(table, x, csv_path)
    ys = numeric_column(table, y, csv_path)
    verdicts = table["verdict"]
    fig, ax = plt.subplots()
    seen = []
    for name, (color, marker) in VERDICT_STYLE.items():
        mask = np.array([v == name for v in verdicts])
        if mask.any():
            ax.scatter(xs[mask], ys[mask], c=color, marker=marker, s=45,
                       label=name, zorder=3)
            seen.append(name)
    other = np.array([v not in VERDICT_STYLE for v in verdicts])
    if other.any():
        ax.scatter(xs[other], ys[other], c="black", marker="s", s=30,
                   label="other", zorder=3)

    if _is_rate_axis(x) and _is_mass_axis(y):
        chi_grid = np.linspace(max(xs.min() * 0.8, 1e-3), xs.max() * 1.2, 200)
        ax.plot(chi_grid, 4.0 * math.pi / chi_grid, "k--", linewidth=1.0,
                label="mass = 4π/χ")
    else:
        print(f"note: no theoretical curve for axes ({x}, {y})")
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.legend(loc="best")
    fig.tight_layout()
    _finish(fig, out_path)


def _is_rate_axis(name):
    return "chi" in name.lower()


def _is_mass_axis(name):
    return "mass" in name.lower()
