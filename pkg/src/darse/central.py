"""Centralized weighted Gauss-Newton and the adaptive re-weighting loop.

This is the reference the decentralized scheme is checked against: the same
per-area gradient/Hessian terms, summed in fixed area order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .grid import GridModel
from .measurement import SelectionMask, Snapshot
from .power_flow import evaluate_f, jacobian

log = logging.getLogger(__name__)


class SingularHessian(np.linalg.LinAlgError):
    def __init__(self, msg, rank_deficiency: int | None = None):
        super().__init__(msg)
        self.rank_deficiency = rank_deficiency


@dataclass
class GNOptions:
    max_iters: int = 20
    tol: float = 1e-8
    v_max: float = 1.5
    ridge: float = 1e-10
    cov_floor: float = 1e-8
    rcond: float = 1e-13
    second_pass: bool = False

    def __post_init__(self):
        for name in ("max_iters", "tol", "v_max", "ridge", "cov_floor", "rcond"):
            if getattr(self, name) <= 0:
                raise ValueError(f"GNOptions.{name} must be positive")


@dataclass
class CovarianceEstimate:
    """Per-area diagonal variance estimates."""

    variances: list[np.ndarray]

    @classmethod
    def prior(cls, masks: Sequence[SelectionMask], sigma: float) -> "CovarianceEstimate":
        return cls([np.full(m.size, float(sigma) ** 2) for m in masks])

    def copy(self) -> "CovarianceEstimate":
        return CovarianceEstimate([g.copy() for g in self.variances])


class GNStep(NamedTuple):
    v_next: np.ndarray
    q: np.ndarray
    Q: np.ndarray
    ridge: float


def project_state(v, v_max: float) -> np.ndarray:
    """Clamp every coordinate into the box ``[-v_max, v_max]``."""
    return np.clip(np.asarray(v, dtype=float), -v_max, v_max)


def area_terms(grid: GridModel, mask: SelectionMask, c, gamma, v):
    """Whitened local gradient ``F~^T (c~ - f~)`` and GN Hessian ``F~^T F~`` at ``v``."""
    n2 = 2 * grid.N
    if mask.size == 0:
        return np.zeros(n2), np.zeros((n2, n2))
    w = 1.0 / np.sqrt(np.asarray(gamma, dtype=float))
    Ft = jacobian(grid, v, mask.rows) * w[:, None]
    rt = (np.asarray(c) - evaluate_f(grid, v, mask.rows)) * w
    return Ft.T @ rt, Ft.T @ Ft


def whitened_residual(grid: GridModel, mask: SelectionMask, c, gamma, v) -> np.ndarray:
    if mask.size == 0:
        return np.zeros(0)
    return (np.asarray(c) - evaluate_f(grid, v, mask.rows)) / np.sqrt(np.asarray(gamma, dtype=float))


def cost(grid: GridModel, masks, cs, gammas, v) -> float:
    """``sum_i ||c~_i - f~_i(v)||^2``."""
    return float(sum(np.sum(whitened_residual(grid, m, c, g, v) ** 2)
                     for m, c, g in zip(masks, cs, gammas)))


def solve_spd(Q: np.ndarray, q: np.ndarray, ridge: float = 1e-10, rcond: float = 1e-13):
    """Solve ``Q d = q`` by Cholesky, adding ``ridge * tr(Q) / n`` only if plain factorization fails.

    Returns ``(d, ridge_added)``.
    """
    n = Q.shape[0]

    def attempt(A):
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            return None
        diag = np.diag(L)
        if diag.size and diag.min() ** 2 <= rcond * diag.max() ** 2:
            return None
        y = np.linalg.solve(L, q)
        return np.linalg.solve(L.T, y)

    d = attempt(Q)
    if d is not None:
        return d, 0.0
    tr = float(np.trace(Q))
    delta = ridge * tr / n if tr > 0 else 0.0
    if delta > 0:
        d = attempt(Q + delta * np.eye(n))
        if d is not None:
            return d, delta
    rank = int(np.linalg.matrix_rank(Q)) if n else 0
    raise SingularHessian(f"GN Hessian is singular (rank {rank} of {n}, deficiency {n - rank})",
                          rank_deficiency=n - rank)


def gn_step(grid: GridModel, masks, cs, gammas, v, opts: GNOptions | None = None) -> GNStep:
    """One projected GN step with ``q``, ``Q`` averaged over the ``I`` areas."""
    opts = opts or GNOptions()
    v = np.asarray(v, dtype=float)
    I = len(masks)
    q = np.zeros(2 * grid.N)
    Q = np.zeros((2 * grid.N, 2 * grid.N))
    for m, c, g in zip(masks, cs, gammas):
        h, H = area_terms(grid, m, c, g, v)
        q += h
        Q += H
    q /= I
    Q /= I
    d, ridge = solve_spd(Q, q, opts.ridge, opts.rcond)
    return GNStep(project_state(v + d, opts.v_max), q, Q, ridge)


def solve_weighted_nlls(grid: GridModel, masks, cs, gammas, v0, opts: GNOptions | None = None,
                        keep_states: bool = False):
    """Iterate :func:`gn_step` until the step norm drops below ``opts.tol`` or ``max_iters``.

    Returns ``(v_hat, trace)``; ``trace[k]`` holds the cost at iterate ``k``
    (``trace[0]`` is the initial point) and, with ``keep_states``, the iterate
    itself under ``"v"``.
    """
    opts = opts or GNOptions()
    v = project_state(v0, opts.v_max)
    trace = [{"iter": 0, "cost": cost(grid, masks, cs, gammas, v), "step": float("nan"), "ridge": 0.0}]
    if keep_states:
        trace[0]["v"] = v.copy()
    for k in range(1, opts.max_iters + 1):
        st = gn_step(grid, masks, cs, gammas, v, opts)
        step = float(np.linalg.norm(st.v_next - v))
        v = st.v_next
        trace.append({"iter": k, "cost": cost(grid, masks, cs, gammas, v), "step": step, "ridge": st.ridge})
        if keep_states:
            trace[-1]["v"] = v.copy()
        if step <= opts.tol:
            break
    return v, trace


def covariance_update(cs, v_hat, grid: GridModel, masks, floor: float = 1e-8) -> CovarianceEstimate:
    """Squared residual per recorded entry, floored at ``floor``."""
    out = []
    for m, c in zip(masks, cs):
        r = np.asarray(c) - evaluate_f(grid, v_hat, m.rows) if m.size else np.zeros(0)
        out.append(np.maximum(r ** 2, floor))
    return CovarianceEstimate(out)


def arse_step(prev: CovarianceEstimate | None, snapshot: Snapshot, grid: GridModel, masks,
              opts: GNOptions | None = None, v_init=None, sigma_prior: float = 1e-3,
              keep_states: bool = False):
    """One snapshot of adaptive re-weighted estimation.

    Weights are the previous covariance estimate (``sigma_prior^2`` when there
    is none), the state is solved by weighted GN, then the covariance is
    re-estimated at the solution.  Returns ``(v_hat, covariance, trace)``.
    """
    opts = opts or GNOptions()
    gam = (prev or CovarianceEstimate.prior(masks, sigma_prior)).variances
    if v_init is None:
        v_init = np.concatenate([np.ones(grid.N), np.zeros(grid.N)])
    v_hat, trace = solve_weighted_nlls(grid, masks, snapshot.c, gam, v_init, opts, keep_states)
    cov = covariance_update(snapshot.c, v_hat, grid, masks, opts.cov_floor)
    if opts.second_pass:
        v_hat, trace2 = solve_weighted_nlls(grid, masks, snapshot.c, cov.variances, v_hat, opts, keep_states)
        trace = trace + [dict(t, iter=t["iter"] + len(trace), second_pass=True) for t in trace2[1:]]
        cov = covariance_update(snapshot.c, v_hat, grid, masks, opts.cov_floor)
    return v_hat, cov, trace
