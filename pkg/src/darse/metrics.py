"""Voltage magnitude/angle error metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

CSV_COLUMNS = ("t", "k", "agent", "val", "mse_v", "mse_theta", "spread", "frozen")


def magnitude_angle(v) -> tuple[np.ndarray, np.ndarray]:
    """``|V_n|`` and ``atan2(Im, Re)``; a zero voltage has angle 0."""
    v = np.asarray(v, dtype=float)
    N = v.size // 2
    re, im = v[:N], v[N:]
    return np.hypot(re, im), np.arctan2(im, re)


def wrap_angle(x):
    """Map angles into ``(-pi, pi]``."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(y == -np.pi, np.pi, y)


def voltage_errors(truth, estimate) -> tuple[float, float]:
    m0, a0 = magnitude_angle(truth)
    m1, a1 = magnitude_angle(estimate)
    return float(np.sum((m0 - m1) ** 2)), float(np.sum(wrap_angle(a0 - a1) ** 2))


@dataclass
class MetricsRow:
    t: int
    k: int
    agent: int
    val: float
    mse_v: float
    mse_theta: float
    spread: float = 0.0
    frozen: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def compute_metrics(truth, estimates: Sequence[np.ndarray], masks=None, cs=None, gammas=None,
                    grid=None, t: int = 0, k: int = 0) -> list[MetricsRow]:
    """Per-agent rows plus a final ``agent = -1`` row holding the global sums.

    With measurement data supplied, each agent's ``val`` is its local term
    ``||c~_i - f~_i(v_i)||^2`` and the global row carries their sum (the
    decentralized cost); otherwise ``val`` is NaN.
    """
    from .central import whitened_residual

    rows = []
    vs = [np.asarray(e, dtype=float) for e in estimates]
    spread = max((float(np.linalg.norm(a - b)) for a in vs for b in vs), default=0.0)
    for i, v in enumerate(vs):
        mv, mt = voltage_errors(truth, v)
        if masks is not None:
            val = float(np.sum(whitened_residual(grid, masks[i], cs[i], gammas[i], v) ** 2))
        else:
            val = float("nan")
        rows.append(MetricsRow(t, k, i, val, mv, mt, spread))
    rows.append(MetricsRow(t, k, -1, float(sum(r.val for r in rows)), float(sum(r.mse_v for r in rows)),
                           float(sum(r.mse_theta for r in rows)), spread))
    return rows
