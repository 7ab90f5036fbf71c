"""First-order diffusion baseline: combine neighbour iterates, then take a local gradient step."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .central import area_terms, project_state
from .grid import GridModel
from .measurement import SelectionMask, Snapshot

DEFAULT_STEP_SCALES = (0.01, 0.3, 0.5, 1.0)


@dataclass
class DiffusionConfig:
    """Step size ``alpha0 / ell`` at exchange ``ell`` (1-based, restarted per snapshot)."""

    alpha0: float = 0.01
    exchanges: int = 200
    v_max: float = 1.5

    def __post_init__(self):
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.exchanges < 0:
            raise ValueError("exchanges must be >= 0")

    def step(self, ell: int) -> float:
        return self.alpha0 / ell


def diffusion_round(iterates: np.ndarray, W: np.ndarray, grid: GridModel, masks: Sequence[SelectionMask],
                    cs, gammas, alpha: float, v_max: float = 1.5) -> np.ndarray:
    """``v_i <- P[sum_j W_ij v_j + alpha * F~_i(v_i)^T (c~_i - f~_i(v_i))]`` for every agent.

    ``iterates`` is ``(I, 2N)``; a new array is returned.
    """
    grads = np.stack([area_terms(grid, m, c, g, v)[0] if alpha else np.zeros_like(v)
                      for m, c, g, v in zip(masks, cs, gammas, iterates)])
    return project_state(W @ iterates + alpha * grads, v_max)


def diffusion_snapshot(grid: GridModel, masks, snapshot: Snapshot, gammas, W, v0: Sequence[np.ndarray],
                       config: DiffusionConfig, record_every: int = 1):
    """Run ``config.exchanges`` rounds; returns final iterates and ``(ell, iterates)`` checkpoints."""
    V = np.array([project_state(v, config.v_max) for v in v0], dtype=float)
    checkpoints = [(0, V.copy())]
    for ell in range(1, config.exchanges + 1):
        V = diffusion_round(V, W, grid, masks, snapshot.c, gammas, config.step(ell), config.v_max)
        if ell % record_every == 0 or ell == config.exchanges:
            checkpoints.append((ell, V.copy()))
    return V, checkpoints
