"""Gossip exchange simulation over time-varying agent graphs.

Two time scales: GN updates ``k`` and, between consecutive updates, gossip
exchanges ``ell = 1..ell_k``.  Wall-clock instants are abstracted away; an
exchange is identified by ``(k, ell)``.  Update index ``k = 0`` is reserved
for the PMU initialization gossip that precedes the first GN update.

Payloads are held as one ``(I, P)`` array, one row per agent.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import rng as rngmod

log = logging.getLogger(__name__)


def complete_overlay(I: int) -> np.ndarray:
    return np.ones((I, I), dtype=int) - np.eye(I, dtype=int)


@dataclass
class GossipConfig:
    """URE protocol parameters.

    ``overlay`` is the symmetric 0/1 adjacency of agent pairs that may ever
    talk (complete graph by default).  ``partner_probabilities[i, j]`` is the
    chance that agent ``i`` picks ``j`` when it wakes (uniform over overlay
    neighbours by default).
    """

    I: int
    beta: float = 0.5
    link_failure_p: float = 0.0
    seed: int = 0
    overlay: np.ndarray | None = None
    partner_probabilities: np.ndarray | None = None

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not 0 <= self.link_failure_p < 1:
            raise ValueError("link_failure_p must lie in [0, 1)")
        A = complete_overlay(self.I) if self.overlay is None else np.asarray(self.overlay, dtype=int)
        if A.shape != (self.I, self.I) or np.any(A != A.T) or np.any(np.diag(A)):
            raise ValueError("overlay must be a symmetric 0/1 matrix with zero diagonal")
        self.overlay = A
        if self.partner_probabilities is None:
            deg = A.sum(axis=1, keepdims=True)
            self.partner_probabilities = np.divide(A, deg, out=np.zeros(A.shape), where=deg > 0)
        G = np.asarray(self.partner_probabilities, dtype=float)
        if np.any(G < 0) or np.any((G > 0) & (A == 0)):
            raise ValueError("partner probabilities must be non-negative and supported on the overlay")
        rows = G.sum(axis=1)
        has_nb = A.sum(axis=1) > 0
        if not np.allclose(rows[has_nb], 1.0):
            raise ValueError("partner probabilities must sum to one over each agent's neighbours")
        self.partner_probabilities = G


@dataclass(frozen=True)
class ExchangeEvent:
    k: int
    ell: int
    i: int
    j: int
    failed: bool = False

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("an agent cannot exchange with itself")


@dataclass
class GraphSequence:
    """Exchange events per update ``k``, in order."""

    I: int
    events: dict[int, list[ExchangeEvent]] = field(default_factory=dict)

    def slice(self, k: int) -> list[ExchangeEvent]:
        return self.events.get(k, [])

    def add(self, evs: Iterable[ExchangeEvent]):
        for e in evs:
            self.events.setdefault(e.k, []).append(e)

    def adjacency(self, k: int, ell: int) -> np.ndarray:
        A = np.zeros((self.I, self.I), dtype=int)
        for e in self.slice(k):
            if e.ell == ell and not e.failed:
                A[e.i, e.j] = A[e.j, e.i] = 1
        return A

    def weight(self, k: int, ell: int, beta: float) -> np.ndarray:
        for e in self.slice(k):
            if e.ell == ell and not e.failed:
                return pairwise_weight_matrix(self.I, e.i, e.j, beta)
        return np.eye(self.I)

    def dump_jsonl(self, path, extra: dict | None = None):
        with open(path, "w") as fh:
            fh.write(json.dumps({"I": self.I, **(extra or {})}) + "\n")
            for k in sorted(self.events):
                for e in self.events[k]:
                    fh.write(json.dumps(asdict(e)) + "\n")

    @classmethod
    def load_jsonl(cls, path) -> "GraphSequence":
        lines = Path(path).read_text().splitlines()
        head = json.loads(lines[0])
        seq = cls(int(head["I"]))
        seq.add(ExchangeEvent(**json.loads(ln)) for ln in lines[1:] if ln.strip())
        return seq


def pairwise_weight_matrix(I: int, i: int, j: int, beta: float) -> np.ndarray:
    """``I - beta (e_i - e_j)(e_i - e_j)^T``: agents ``i`` and ``j`` keep ``1 - beta`` and swap ``beta``."""
    if i == j:
        raise ValueError("pairwise weight matrix needs two distinct agents")
    u = np.zeros(I)
    u[i], u[j] = 1.0, -1.0
    return np.eye(I) - beta * np.outer(u, u)


def ure_round(payloads: np.ndarray, event: ExchangeEvent, beta: float) -> np.ndarray:
    """Apply one pairwise exchange to the ``(I, P)`` payload stack, in place."""
    if event.failed:
        return payloads
    a, b = payloads[event.i].copy(), payloads[event.j]
    payloads[event.i] = (1 - beta) * a + beta * b
    payloads[event.j] = (1 - beta) * b + beta * a
    return payloads


def generate_schedule(config: GossipConfig, k: int, n_exchanges: int, t: int = 0) -> list[ExchangeEvent]:
    """Random URE events for update ``k`` of snapshot ``t``: waking agent uniform, partner per ``gamma``."""
    if n_exchanges < 0:
        raise ValueError("number of exchanges must be non-negative")
    rng = rngmod.stream(config.seed, "gossip", t, k)
    G = config.partner_probabilities
    wakers = rng.integers(0, config.I, size=n_exchanges)
    u_partner = rng.random(n_exchanges)
    u_fail = rng.random(n_exchanges)
    cdf = np.cumsum(G, axis=1)
    out = []
    for ell in range(n_exchanges):
        i = int(wakers[ell])
        if cdf[i, -1] <= 0:
            continue
        j = int(min(np.searchsorted(cdf[i], u_partner[ell] * cdf[i, -1], side="right"), config.I - 1))
        while G[i, j] == 0:  # guard against float edge of cdf
            j -= 1
        out.append(ExchangeEvent(k, ell + 1, i, j, bool(u_fail[ell] < config.link_failure_p)))
    return out


def round_robin_schedule(pairs: Sequence[tuple[int, int]], k: int, n_exchanges: int) -> list[ExchangeEvent]:
    """Deterministic schedule cycling through ``pairs``; every pair recurs within ``len(pairs)`` slots."""
    return [ExchangeEvent(k, ell + 1, *pairs[ell % len(pairs)]) for ell in range(n_exchanges)]


@dataclass
class Condition1Report:
    connected: bool
    violations: list[dict]

    @property
    def ok(self) -> bool:
        return self.connected and not self.violations


def verify_condition1(events: Sequence[ExchangeEvent], I: int, L: int) -> Condition1Report:
    """Check bounded intercommunication over one update's (finite) exchange list.

    (a) the union of successful links connects all agents; (b) every pair in
    that union is active in every window of ``L`` consecutive exchanges.
    Only the first violating window of each pair is reported.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    active = [frozenset((e.i, e.j)) if not e.failed else None for e in events]
    pairs = sorted({p for p in active if p is not None}, key=sorted)
    parent = list(range(I))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for p in pairs:
        a, b = tuple(p)
        parent[find(a)] = find(b)
    connected = len({find(x) for x in range(I)}) == 1
    violations = []
    n = len(active)
    for p in pairs:
        hits = np.array([q == p for q in active], dtype=int)
        if n < L:
            continue
        window = np.convolve(hits, np.ones(L, dtype=int), mode="valid")
        bad = np.flatnonzero(window == 0)
        if bad.size:
            violations.append({"pair": sorted(p), "window_start": int(bad[0]) + 1, "L": L})
    return Condition1Report(connected, violations)


def synchronous_weight_matrix(A, alpha: float) -> np.ndarray:
    """``W = I - w L`` with ``L`` the graph Laplacian and ``w = alpha / max degree``."""
    A = np.asarray(A, dtype=float)
    if A.shape[0] != A.shape[1] or np.any(A != A.T) or np.any(np.diag(A)):
        raise ValueError("adjacency must be symmetric with zero diagonal")
    deg = A.sum(axis=1)
    if _components(A) > 1:
        log.warning("synchronous overlay is disconnected; averaging will not reach consensus")
    if deg.max() == 0:
        return np.eye(len(A))
    w = alpha / deg.max()
    return np.eye(len(A)) - w * (np.diag(deg) - A)


def _components(A) -> int:
    n = len(A)
    seen = np.zeros(n, bool)
    count = 0
    for s in range(n):
        if seen[s]:
            continue
        count += 1
        stack = [s]
        seen[s] = True
        while stack:
            x = stack.pop()
            for y in np.flatnonzero(A[x]):
                if not seen[y]:
                    seen[y] = True
                    stack.append(y)
    return count


# Mixing protocols -----------------------------------------------------------

class URE:
    """Random pairwise exchanges; every applied event is recorded in ``history``."""

    name = "ure"

    def __init__(self, config: GossipConfig):
        self.config = config
        self.history: dict[int, GraphSequence] = {}

    @property
    def beta(self) -> float:
        return self.config.beta

    def events(self, t: int, k: int, n: int) -> list[ExchangeEvent]:
        return generate_schedule(self.config, k, n, t)

    def mix(self, payloads: np.ndarray, t: int, k: int, n: int) -> list[ExchangeEvent]:
        evs = self.events(t, k, n)
        for e in evs:
            ure_round(payloads, e, self.beta)
        self.history.setdefault(t, GraphSequence(self.config.I)).add(evs)
        return evs


class Replay(URE):
    """Replays recorded per-snapshot schedules instead of drawing new events."""

    name = "replay"

    def __init__(self, schedules: dict[int, GraphSequence], beta: float):
        self.schedules = schedules
        self._beta = beta
        self.history = {}
        I = next(iter(schedules.values())).I if schedules else 1
        self.config = GossipConfig(I=max(I, 1), beta=beta)

    @property
    def beta(self) -> float:
        return self._beta

    def events(self, t, k, n):
        evs = self.schedules[t].slice(k) if t in self.schedules else []
        if len(evs) != n:
            log.warning("replay schedule t=%d k=%d has %d events, expected %d", t, k, len(evs), n)
        return evs


class Synchronous:
    """Every exchange applies ``W = I - w L`` over the overlay; links may fail per round."""

    name = "sync"

    def __init__(self, A, alpha: float = 0.03, link_failure_p: float = 0.0, seed: int = 0):
        self.A = np.asarray(A, dtype=int)
        self.alpha = alpha
        self.link_failure_p = link_failure_p
        self.seed = seed
        self.W = synchronous_weight_matrix(self.A, alpha)
        self.history = {}

    def mix(self, payloads: np.ndarray, t: int, k: int, n: int):
        if self.link_failure_p == 0:
            Wn = np.linalg.matrix_power(self.W, n) if n else np.eye(len(self.W))
            payloads[:] = Wn @ payloads
            return []
        rng = rngmod.stream(self.seed, "gossip", t, k)
        w = self.alpha / self.A.sum(axis=1).max()
        iu = np.triu_indices(len(self.A), 1)
        for _ in range(n):
            alive = self.A.copy()
            fail = rng.random(len(iu[0])) < self.link_failure_p
            alive[iu[0][fail], iu[1][fail]] = 0
            alive[iu[1][fail], iu[0][fail]] = 0
            W = np.eye(len(self.A)) - w * (np.diag(alive.sum(axis=1)) - alive)
            payloads[:] = W @ payloads
        return []


class ExactAverage:
    """Oracle mixing: every agent receives the exact network average."""

    name = "exact"
    history: dict = {}

    def mix(self, payloads: np.ndarray, t: int, k: int, n: int):
        # sequential sum in agent order, matching the centralized reduction
        acc = np.zeros_like(payloads[0])
        for row in payloads:
            acc += row
        payloads[:] = acc / payloads.shape[0]
        return []
