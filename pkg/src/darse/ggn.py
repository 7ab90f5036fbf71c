"""Gossip-based Gauss-Newton and the decentralized adaptive re-weighting scheme.

Each agent keeps its own iterate of the *global* state.  Per update it forms
its whitened local gradient/Hessian at that iterate, the packed payloads
``[h; vec(H)]`` (column-major) are mixed by the gossip protocol, and every
agent takes the GN step ``H^{-1} h`` from its mixed payload.  Because the
step is a ratio, mixing sums or averages makes no difference.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .central import (CovarianceEstimate, GNOptions, SingularHessian, area_terms, cost,
                      covariance_update, gn_step, project_state, solve_spd)
from .grid import GridModel
from .measurement import SelectionMask, Snapshot
from .metrics import compute_metrics

log = logging.getLogger(__name__)


class SingularLocalHessian(SingularHessian):
    pass


@dataclass
class InfoVector:
    h: np.ndarray
    H: np.ndarray

    def pack(self) -> np.ndarray:
        return np.concatenate([self.h, self.H.ravel(order="F")])

    @classmethod
    def unpack(cls, payload: np.ndarray, n2: int) -> "InfoVector":
        return cls(payload[:n2].copy(), payload[n2:].reshape((n2, n2), order="F").copy())


@dataclass
class AgentState:
    i: int
    v: np.ndarray
    gamma: np.ndarray
    mask: SelectionMask
    c: np.ndarray
    stopped: bool = False
    frozen: bool = False


@dataclass
class DarseConfig:
    """Per-snapshot schedule of the decentralized scheme.

    ``exchanges`` is the minimum exchange count ``ell_star``; with
    ``exchange_rule="increment"`` update ``k`` uses ``ell_star + k - 1``.
    ``init_mode`` is one of ``pmu_decentralized``, ``pmu_centralized``,
    ``previous_estimate`` or ``flat``.
    """

    K: int = 20
    exchanges: int = 10
    exchange_rule: str = "constant"
    init_mode: str = "pmu_decentralized"
    init_exchanges: int | None = None
    gn: GNOptions = field(default_factory=GNOptions)
    ridge_fallback: bool = False
    track_discrepancy: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.exchanges < 0:
            raise ValueError("exchanges must be >= 0")
        if self.exchange_rule not in ("constant", "increment"):
            raise ValueError(f"unknown exchange rule {self.exchange_rule!r}")
        if self.init_mode not in ("pmu_decentralized", "pmu_centralized", "previous_estimate", "flat"):
            raise ValueError(f"unknown init mode {self.init_mode!r}")

    def exchanges_at(self, k: int) -> int:
        """Exchanges before update ``k`` (1-based)."""
        return self.exchanges + (k - 1 if self.exchange_rule == "increment" else 0)


def flat_profile(N: int) -> np.ndarray:
    return np.concatenate([np.ones(N), np.zeros(N)])


def local_info_init(grid: GridModel, agent: AgentState) -> InfoVector:
    """Whitened local gradient and GN Hessian at the agent's own iterate."""
    h, H = area_terms(grid, agent.mask, agent.c, agent.gamma, agent.v)
    return InfoVector(h, H)


def ggn_descent(agent: AgentState, info: InfoVector, v_max: float, ridge: float | None = None,
                rcond: float = 1e-13) -> np.ndarray:
    """``P[v + H^{-1} h]``; ``ridge=None`` disables the regularized retry."""
    try:
        d, _ = solve_spd(info.H, info.h, ridge if ridge is not None else 0.0, rcond)
    except SingularHessian as e:
        raise SingularLocalHessian(f"agent {agent.i}: {e}", e.rank_deficiency) from None
    return project_state(agent.v + d, v_max)


@dataclass
class UpdateReport:
    k: int
    frozen: list[int]
    events: list
    discrepancy: list[float] | None = None


def mix_info(infos: Sequence[InfoVector], protocol, t: int, k: int, n: int):
    n2 = len(infos[0].h)
    payloads = np.stack([x.pack() for x in infos])
    events = protocol.mix(payloads, t, k, n)
    return [InfoVector.unpack(p, n2) for p in payloads], events


def shadow_descent(grid: GridModel, agents: Sequence[AgentState], v, gn: GNOptions) -> np.ndarray:
    """Centralized descent ``Q(v)^{-1} q(v)`` at ``v`` using every agent's data."""
    st = gn_step(grid, [a.mask for a in agents], [a.c for a in agents], [a.gamma for a in agents],
                 v, GNOptions(**{**gn.__dict__, "v_max": np.inf}))
    return st.v_next - v


def run_ggn_update(agents: Sequence[AgentState], grid: GridModel, protocol, k: int, n_exchanges: int,
                   t: int = 0, config: DarseConfig | None = None) -> UpdateReport:
    """Advance every agent by one GGN update (in place)."""
    config = config or DarseConfig()
    infos = [local_info_init(grid, a) for a in agents]
    mixed, events = mix_info(infos, protocol, t, k, n_exchanges)
    frozen = []
    disc = [] if config.track_discrepancy else None
    ridge = config.gn.ridge if config.ridge_fallback else None
    new_v = []
    for a, info in zip(agents, mixed):
        a.frozen = False
        if a.stopped:
            new_v.append(a.v)
            continue
        try:
            v_next = ggn_descent(a, info, config.gn.v_max, ridge, config.gn.rcond)
        except SingularLocalHessian as e:
            log.debug("%s; iterate frozen", e)
            a.frozen = True
            frozen.append(a.i)
            new_v.append(a.v)
            continue
        if disc is not None:
            try:
                d_local, _ = solve_spd(info.H, info.h, 0.0, config.gn.rcond)
                disc.append(float(np.linalg.norm(d_local - shadow_descent(grid, agents, a.v, config.gn))))
            except SingularHessian:
                pass
        new_v.append(v_next)
    for a, v in zip(agents, new_v):
        if not a.stopped and not a.frozen and np.linalg.norm(v - a.v) <= config.gn.tol:
            a.stopped = True
        a.v = v
    return UpdateReport(k, frozen, events, disc)


def pmu_init_centralized(masks: Sequence[SelectionMask], cs, s_v) -> np.ndarray:
    """PMU-measured coordinates take their measurement, the rest keep ``s_v``."""
    v0 = np.array(s_v, dtype=float)
    for m, c in zip(masks, cs):
        coords = m.voltage_coordinates()
        if coords.size:
            v0[coords] = np.asarray(c)[np.searchsorted(m.rows, m.category("voltage"))]
    return v0


def pmu_init_decentralized(masks: Sequence[SelectionMask], cs, s_v, protocol, t: int = 0,
                           n_exchanges: int = 0) -> list[np.ndarray]:
    """Gossip zero-padded PMU vectors, rescale by ``I`` and fill gaps from ``s_v``.

    A coordinate counts as instrumented wherever its gossiped value is
    nonzero, so a PMU reading of exactly zero falls back to ``s_v``.
    ``s_v`` is one vector or one per agent.  Payloads are mixed in extended
    precision so that exact averaging followed by the ``I`` rescale returns
    the measured values bit for bit.
    """
    I = len(masks)
    n2 = len(s_v[0]) if np.ndim(s_v) == 2 else len(s_v)
    s_list = [np.asarray(s, dtype=float) for s in s_v] if np.ndim(s_v) == 2 else [np.asarray(s_v, float)] * I
    P = np.zeros((I, n2), dtype=np.longdouble)
    for i, (m, c) in enumerate(zip(masks, cs)):
        coords = m.voltage_coordinates()
        P[i, coords] = np.asarray(c)[np.searchsorted(m.rows, m.category("voltage"))]
    protocol.mix(P, t, 0, n_exchanges)
    out = []
    for i in range(I):
        scaled = (I * P[i]).astype(float)
        inst = P[i] != 0
        out.append(np.where(inst, scaled, s_list[i]))
    return out


def _own_covariance(grid: GridModel, agent: AgentState, floor: float) -> np.ndarray:
    return covariance_update([agent.c], agent.v, grid, [agent.mask], floor).variances[0]


@dataclass
class SnapshotResult:
    t: int
    estimates: list[np.ndarray]
    covariance: CovarianceEstimate
    rows: list[dict]
    reports: list[UpdateReport]
    reference: np.ndarray | None = None
    reference_cost: float | None = None


def _trace_rows(grid, agents, snapshot, t, k, masks, gammas):
    """Metric rows at update ``k``; ``cost`` is the full weighted cost at each agent's iterate."""
    rows = []
    for m in compute_metrics(snapshot.true_state, [a.v for a in agents], masks, snapshot.c, gammas,
                             grid, t, k):
        d = m.as_dict()
        if m.agent >= 0:
            a = agents[m.agent]
            d["frozen"] = int(a.frozen)
            d["cost"] = cost(grid, masks, snapshot.c, gammas, a.v)
        rows.append(d)
    rows[-1]["frozen"] = sum(int(a.frozen) for a in agents)
    return rows


def darse_snapshot(grid: GridModel, masks: Sequence[SelectionMask], snapshot: Snapshot,
                   prev: CovarianceEstimate, config: DarseConfig, protocol,
                   s_v=None, reference: bool = False) -> SnapshotResult:
    """Run the decentralized scheme on one snapshot.

    ``prev`` supplies the weights (the previous covariance estimate or the
    prior); ``s_v`` the fallback state(s) for the initializer, the flat
    profile when omitted.
    """
    t = snapshot.t
    I = len(masks)
    gammas = [g.copy() for g in prev.variances]
    if s_v is None:
        s_v = flat_profile(grid.N)
    s_list = [np.asarray(s, float) for s in s_v] if np.ndim(s_v) == 2 else [np.asarray(s_v, float)] * I
    if config.init_mode == "pmu_decentralized":
        n0 = config.exchanges if config.init_exchanges is None else config.init_exchanges
        v0 = pmu_init_decentralized(masks, snapshot.c, s_list, protocol, t, n0)
    elif config.init_mode == "pmu_centralized":
        v0 = [pmu_init_centralized(masks, snapshot.c, s) for s in s_list]
    elif config.init_mode == "previous_estimate":
        v0 = s_list
    else:
        v0 = [flat_profile(grid.N)] * I
    agents = [AgentState(i, project_state(v0[i], config.gn.v_max), gammas[i], masks[i], snapshot.c[i])
              for i in range(I)]
    rows = _trace_rows(grid, agents, snapshot, t, 0, masks, gammas)
    reports = []
    passes = 2 if config.gn.second_pass else 1
    for p in range(passes):
        if p:
            # re-weight with each agent's own residuals, then repeat the updates
            for a in agents:
                a.gamma = _own_covariance(grid, a, config.gn.cov_floor)
                a.stopped = False
            gammas = [a.gamma for a in agents]
        for k in range(p * config.K + 1, (p + 1) * config.K + 1):
            rep = run_ggn_update(agents, grid, protocol, k, config.exchanges_at(k - p * config.K), t, config)
            reports.append(rep)
            rows += _trace_rows(grid, agents, snapshot, t, k, masks, gammas)
            if all(a.stopped for a in agents):
                break
    estimates = [a.v.copy() for a in agents]
    cov = CovarianceEstimate([_own_covariance(grid, a, config.gn.cov_floor) for a in agents])
    res = SnapshotResult(t, estimates, cov, rows, reports)
    if reference:
        from .central import solve_weighted_nlls
        ref_opts = GNOptions(**{**config.gn.__dict__, "max_iters": max(50, config.gn.max_iters)})
        v_ref, _ = solve_weighted_nlls(grid, masks, snapshot.c, gammas,
                                       pmu_init_centralized(masks, snapshot.c, s_list[0]), ref_opts)
        res.reference = v_ref
        res.reference_cost = cost(grid, masks, snapshot.c, gammas, v_ref)
    return res


@dataclass
class TrackResult:
    snapshots: list[SnapshotResult]

    @property
    def rows(self) -> list[dict]:
        return [r for s in self.snapshots for r in s.rows]


def darse_track(grid: GridModel, masks: Sequence[SelectionMask], snapshots: Sequence[Snapshot],
                config: DarseConfig, protocol, sigma_prior: float, reference: bool = False) -> TrackResult:
    """Fold :func:`darse_snapshot` over a stream, carrying covariances and final states."""
    if not snapshots:
        raise ValueError("need at least one snapshot")
    cov = CovarianceEstimate.prior(masks, sigma_prior)
    s_v = None
    out = []
    for snap in snapshots:
        res = darse_snapshot(grid, masks, snap, cov, config, protocol, s_v, reference)
        out.append(res)
        cov = res.covariance
        s_v = res.estimates
    return TrackResult(out)
