"""Render the figure-data CSVs of an experiment directory to PNG files.

matplotlib is imported lazily so the rest of the package never needs it.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

LABELS = {"val": "weighted cost", "mse_v": "magnitude MSE", "mse_theta": "angle MSE"}


def _series(path: Path):
    by_alg = defaultdict(list)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            by_alg[row["algorithm"]].append((int(row["t"]), int(row["k"]), float(row["value"])))
    return by_alg


def render_figures(out_dir) -> list[Path]:
    """One log-scale PNG per metric; snapshots are laid end to end on the x axis."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig_dir = Path(out_dir) / "figures"
    written = []
    for metric, label in LABELS.items():
        src = fig_dir / f"fig_{metric}.csv"
        if not src.exists():
            continue
        fig, ax = plt.subplots(figsize=(7, 4))
        for alg, pts in sorted(_series(src).items()):
            offset, xs, ys, last_t, span = 0, [], [], None, 0
            for t, k, y in pts:
                if last_t is not None and t != last_t:
                    offset += span + 1
                xs.append(offset + k)
                ys.append(max(y, 1e-300))
                last_t, span = t, k
            ax.semilogy(xs, ys, label=alg, lw=1.2)
        ax.set_xlabel("iteration index (snapshots concatenated)")
        ax.set_ylabel(label)
        ax.legend(fontsize=7)
        fig.tight_layout()
        dst = fig_dir / f"fig_{metric}.png"
        fig.savefig(dst, dpi=120)
        plt.close(fig)
        written.append(dst)
    return written
