"""SVG figures for the experiment CSVs (headless matplotlib)."""

from __future__ import annotations

import os
from collections import OrderedDict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_equilibration", "plot_bench"]

_RC = {"svg.hashsalt": "mfequil", "svg.fonttype": "none"}


def _save(fig, path):
    tmp = f"{os.fspath(path)}.tmp"
    fig.savefig(tmp, format="svg", metadata={"Date": None})
    plt.close(fig)
    os.replace(tmp, path)


def _positive(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray([np.nan if v is None else v for v in y], dtype=np.float64)
    keep = np.isfinite(y) & (y > 0)
    return x[keep], y[keep]


def plot_equilibration(rows, path, slope=None):
    """Relative gap, RMS error and condition number against iteration, log-log."""
    t = [r[0] for r in rows]
    series = [("relative gap", [r[1] for r in rows]), ("RMS error", [r[2] for r in rows]),
              ("condition number", [r[3] for r in rows])]
    series = [(name, y) for name, y in series if any(v is not None for v in y)]
    with matplotlib.rc_context(_RC):
        fig, axes = plt.subplots(1, max(1, len(series)), figsize=(4.2 * max(1, len(series)), 3.4))
        axes = np.atleast_1d(axes)
        for ax, (name, y) in zip(axes, series):
            # t = 0 cannot sit on a log axis; shift by one
            x, yy = _positive(np.asarray(t) + 1, y)
            ax.loglog(x, yy, lw=1.2)
            ax.set_xlabel("iteration + 1")
            ax.set_title(name)
            ax.grid(True, which="both", alpha=0.3)
            if name == "relative gap" and slope is not None and np.isfinite(slope):
                ax.text(0.05, 0.05, f"fitted slope {slope:.2f}", transform=ax.transAxes)
        fig.tight_layout()
        _save(fig, path)


def plot_bench(rows, path, ylabel):
    """One curve per variant: accuracy against total iterations (equilibration charged)."""
    groups = OrderedDict()
    for variant, it, val in rows:
        groups.setdefault(variant, ([], []))
        groups[variant][0].append(it)
        groups[variant][1].append(val)
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.5, 3.8))
        for variant, (x, y) in groups.items():
            xx, yy = _positive(x, y)
            ax.semilogy(xx, yy, lw=1.1, label=variant)
        ax.set_xlabel("total iterations")
        ax.set_ylabel(ylabel)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        fig.tight_layout()
        _save(fig, path)
