"""Constants of the convergence analysis: schedule design and bound checks.

Cost and Hessian extrema over the state box are only *sampled*, so every
quantity derived from them is an empirical (inner) approximation.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, fields
from typing import Callable, Sequence

import numpy as np

from . import rng as rngmod
from .central import whitened_residual
from .grid import GridModel
from .measurement import SelectionMask
from .power_flow import jacobian

log = logging.getLogger(__name__)

MAX_EXCHANGES = 10**9


class UnobservableWarning(UserWarning):
    pass


class ScheduleOverflow(OverflowError):
    pass


@dataclass
class ConvergenceConstants:
    eps_min: float
    eps_max: float
    sigma_min: float
    sigma_max: float
    omega: float
    I: int
    L: int
    N: int
    beta: float = 0.5
    xi: float = 0.25
    nu_delta: float = float("nan")
    nu_Delta: float = float("nan")
    nu: float = float("nan")
    eta: float = float("nan")
    lambda_eta: float = float("nan")
    lambda_inf: float = float("nan")
    C: float = float("nan")
    C1: float = float("nan")
    C2: float = float("nan")
    D: float = float("nan")
    ell_star: int | None = None
    kappa: float = float("nan")
    T1: float = float("nan")
    T2: float = float("nan")
    basin_radius: float = float("nan")

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "ConvergenceConstants":
        d = json.loads(text)
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# Samplers ----------------------------------------------------------------------

Sampler = Callable[[np.random.Generator, int], np.ndarray]


def box_sampler(v_max: float = 1.5) -> Sampler:
    def draw(rng, n2):
        return rng.uniform(-v_max, v_max, n2)
    return draw


def perturbation_sampler(center, scale: float = 0.05, v_max: float = 1.5) -> Sampler:
    center = np.asarray(center, dtype=float)

    def draw(rng, n2):
        return np.clip(center + scale * rng.standard_normal(n2), -v_max, v_max)
    return draw


def estimate_condition2(grid: GridModel, masks: Sequence[SelectionMask], cs, gammas,
                        sampler: Sampler | Sequence[np.ndarray], n_samples: int = 100, seed: int = 0,
                        tol: float = 1e-12):
    """Sampled ``(eps_min, eps_max, sigma_min, sigma_max)``.

    The cost is ``sum_i ||c~_i - f~_i(v)||`` (norms, not squared); the
    sigmas are extreme singular values of the stacked whitened Jacobian.
    ``sampler`` is a callable or an explicit list of states (then
    ``n_samples`` is ignored).
    """
    if callable(sampler):
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        rng = rngmod.stream(seed, "sampler")
        states = [sampler(rng, 2 * grid.N) for _ in range(n_samples)]
    else:
        states = [np.asarray(s, dtype=float) for s in sampler]
        if not states:
            raise ValueError("need at least one sample state")
    e_lo, e_hi, s_lo, s_hi = math.inf, 0.0, math.inf, 0.0
    for v in states:
        e = sum(float(np.linalg.norm(whitened_residual(grid, m, c, g, v))) for m, c, g in zip(masks, cs, gammas))
        blocks = [jacobian(grid, v, m.rows) / np.sqrt(np.asarray(g, float))[:, None]
                  for m, g in zip(masks, gammas) if m.size]
        F = np.vstack(blocks) if blocks else np.zeros((0, 2 * grid.N))
        # sqrt of eigenvalues of F^T F; rows < columns means a zero eigenvalue
        sv = np.linalg.svd(F, compute_uv=False) if F.size else np.zeros(0)
        smin = float(sv.min()) if F.shape[0] >= F.shape[1] and sv.size else 0.0
        smax = float(sv.max()) if sv.size else 0.0
        e_lo, e_hi = min(e_lo, e), max(e_hi, e)
        s_lo, s_hi = min(s_lo, smin), max(s_hi, smax)
    if s_lo <= tol * max(s_hi, 1.0):
        warnings.warn(f"sampled sigma_min={s_lo:.3g}: network-wide GN Hessian is singular", UnobservableWarning)
    return e_lo, e_hi, s_lo, s_hi


def corollary1_constants(omega: float, eps_max: float, sigma_max: float) -> tuple[float, float]:
    """Lipschitz constants of the whitened gradient and GN Hessian maps."""
    if min(omega, eps_max, sigma_max) < 0:
        raise ValueError("inputs must be non-negative")
    return omega * (eps_max + sigma_max), 2.0 * sigma_max * omega


def _log_lambda_eta(eta: float, IL: int) -> float:
    return math.log1p(-eta ** IL) / IL


def condition3_schedule(beta: float, I: int, L: int, xi: float, const: ConvergenceConstants,
                        rule: str = "increment", K: int | None = None,
                        cap: int = MAX_EXCHANGES) -> ConvergenceConstants:
    """Fill in ``eta .. D`` and the minimum exchange count ``ell_star``.

    ``rule="increment"`` (``ell_k = ell_star + k``) gives
    ``lambda_inf = 1 / (1 - lambda_eta)``; ``rule="constant"`` over ``K``
    updates gives the finite sum ``K + 1``.  The bus count ``N`` (not ``2N``)
    enters ``C``.  Raises :class:`ScheduleOverflow` when ``ell_star`` would
    exceed ``cap``.
    """
    if not 0 < xi < 0.5:
        raise ValueError("xi must lie in (0, 1/2)")
    eta = min(beta, 1.0 - beta)
    if not 0 < eta < 1:
        raise ValueError("eta = min(beta, 1 - beta) must lie in (0, 1)")
    c = ConvergenceConstants(**asdict(const))
    c.beta, c.xi, c.I, c.L = beta, xi, I, L
    IL = I * L
    c.eta = eta
    log_lam = _log_lambda_eta(eta, IL)
    c.lambda_eta = math.exp(log_lam)
    if rule == "increment":
        c.lambda_inf = 1.0 / (1.0 - c.lambda_eta) if c.lambda_eta < 1 else math.inf
    elif rule == "constant":
        if K is None:
            raise ValueError("constant rule needs K")
        c.lambda_inf = float(K + 1)
    else:
        raise ValueError(f"unknown exchange rule {rule!r}")
    c.nu_delta, c.nu_Delta = corollary1_constants(c.omega, c.eps_max, c.sigma_max)
    c.nu = max(c.nu_delta, c.nu_Delta)
    if c.sigma_min <= 0:
        raise ValueError("sigma_min must be positive")
    eIL = eta ** IL
    c.C = (2 * I * c.sigma_max * math.sqrt(I * (c.eps_max ** 2 + c.N * c.sigma_max ** 2))
           * (1 + 1 / eIL if eIL > 0 else math.inf) / (1 - eIL))
    c.C1 = 2 * (1 + c.sigma_max * c.eps_max / c.sigma_min ** 2)
    c.C2 = I / c.sigma_min ** 2
    c.D = c.C * c.C2 * (c.nu * c.lambda_inf * c.C1 * c.C2 + 1)
    if not math.isfinite(c.D) or log_lam == 0.0:
        raise ScheduleOverflow("exchange schedule diverges (lambda_eta -> 1 or D infinite)")
    ell = math.ceil(math.log(xi / (4 * c.D)) / log_lam)
    if ell > cap:
        raise ScheduleOverflow(f"ell_star = {ell} exceeds cap {cap}")
    c.ell_star = max(int(ell), 0)
    return c


def theorem1_bounds(const: ConvergenceConstants, ell_star: int | None = None) -> dict:
    """``kappa``, ``T1``, ``T2``, basin radius and the hypothesis checks of the local-convergence bound."""
    c = const
    ell = c.ell_star if ell_star is None else ell_star
    if ell is None:
        raise ValueError("ell_star is not set")
    log_lam = _log_lambda_eta(c.eta, c.I * c.L)
    # log space: D can be astronomically large while lambda^ell is tiny
    if c.C1 * c.D > 0:
        kappa = math.exp(math.log(4 * c.C1 * c.D) + (ell + 1) * log_lam)
    else:
        kappa = 0.0
    T1 = c.omega / (2 * c.sigma_min)
    T2 = math.sqrt(2) * c.omega * c.eps_min / c.sigma_min ** 2
    basin = math.inf if c.omega == 0 else 2 * c.sigma_min / c.omega - kappa
    kappa_limit = math.inf if T1 == 0 else (1 - T2) ** 2 / (4 * T1)
    return {
        "kappa": kappa, "T1": T1, "T2": T2, "basin_radius": basin,
        "hyp_T2": math.sqrt(2) * c.omega * c.eps_min < 3 * c.sigma_min ** 2,
        "kappa_limit": kappa_limit,
        # "kappa << limit" read as two orders of magnitude
        "hyp_kappa": kappa <= 1e-2 * kappa_limit,
    }


def analyze(grid: GridModel, masks, cs, gammas, beta: float, L: int, xi: float,
            sampler: Sampler, n_samples: int = 100, seed: int = 0, rule: str = "increment",
            K: int | None = None) -> ConvergenceConstants:
    """End-to-end: sample cost and Hessian extrema, compute omega, the schedule and the bounds."""
    from .power_flow import lipschitz_constant

    e_lo, e_hi, s_lo, s_hi = estimate_condition2(grid, masks, cs, gammas, sampler, n_samples, seed)
    omega = lipschitz_constant(grid, gammas)
    base = ConvergenceConstants(e_lo, e_hi, s_lo, s_hi, omega, len(masks), L, grid.N)
    c = condition3_schedule(beta, len(masks), L, xi, base, rule, K)
    b = theorem1_bounds(c)
    c.kappa, c.T1, c.T2, c.basin_radius = b["kappa"], b["T1"], b["T2"], b["basin_radius"]
    return c
