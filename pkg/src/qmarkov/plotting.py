"""Figures for scenario reports, rendered off-screen to image files."""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

_FLOOR = 1e-18


def plot_report(report, path) -> str:
    """Histogram of the report's per-trial samples, or a bar chart of its scalars.

    Magnitudes are shown on a log10 axis because most quantities are residuals
    that sit near machine precision.
    """
    fig = Figure(figsize=(6.4, 4.0), constrained_layout=True)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(1, 1, 1)
    if report.samples:
        for name, values in sorted(report.samples.items()):
            mags = np.log10(np.maximum(np.abs(np.asarray(values, dtype=float)), _FLOOR))
            ax.hist(mags, bins=30, alpha=0.6, label=f"{name} (n={len(values)})")
        ax.set_xlabel("log10 |value|")
        ax.set_ylabel("count")
        ax.legend(fontsize=8)
    else:
        items = [(k, float(v)) for k, v in sorted(report.quantities.items())
                 if isinstance(v, (int, float)) and not isinstance(v, bool)]
        names = [k for k, _ in items]
        mags = [np.log10(max(abs(v), _FLOOR)) for _, v in items]
        ax.barh(names, mags, color="tab:blue")
        ax.set_xlabel("log10 |value|")
        ax.tick_params(axis="y", labelsize=7)
    verdicts = ", ".join(f"{k}={'T' if v else 'F'}" for k, v in sorted(report.verdicts.items()))
    ax.set_title(f"{report.name} (seed {report.seed})\n{verdicts}", fontsize=8)
    fig.savefig(path, dpi=120)
    return str(path)
