"""Grid topology, admittances and the constant quadratic-form matrices.

Every SCADA quantity is a quadratic form ``v^T A v`` and every PMU quantity a
linear form of the rectangular state ``v = [Re V; Im V]``.  The dense
per-bus/per-line builders (:func:`bus_matrices`, :func:`line_matrices`) are
meant for inspection and testing; the estimators use the compact row storage
in :class:`QuadraticFormSet`, which exploits the fact that every matrix only
has nonzeros in the two rows ``n`` and ``N + n`` of the metering bus.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

CONVENTIONS = ("negated", "standard")


class GridError(ValueError):
    """Invalid grid description."""


@dataclass(frozen=True)
class Bus:
    id: int


@dataclass(frozen=True)
class Line:
    """Pi-model line between two buses (0-based positions into ``GridModel.buses``).

    ``shunt_admittance`` is the half-shunt attached at *each* end.
    """

    from_bus: int
    to_bus: int
    series_admittance: complex
    shunt_admittance: complex = 0j


class GridModel:
    """Immutable bus/line description of a transmission grid.

    Parameters
    ----------
    buses, lines:
        Lines reference buses by position (0..N-1).
    admittance_convention:
        ``"negated"`` sets the diagonal of the admittance matrix to
        ``-sum(Ybar_nm + Y_nm)``; ``"standard"`` uses the textbook
        ``+sum(Ybar_nm + Y_nm)``.  Off-diagonals are ``-Y_nm`` in both.
    """

    def __init__(self, buses: Sequence[Bus], lines: Sequence[Line],
                 admittance_convention: str = "negated", name: str = ""):
        if admittance_convention not in CONVENTIONS:
            raise GridError(f"unknown admittance convention {admittance_convention!r}")
        self.buses = tuple(buses)
        self.lines = tuple(lines)
        self.admittance_convention = admittance_convention
        self.name = name
        self._validate()

    def _validate(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise GridError("duplicate bus ids")
        if not self.buses:
            raise GridError("grid has no buses")
        seen = set()
        for k, ln in enumerate(self.lines):
            if ln.from_bus == ln.to_bus:
                raise GridError(f"line {k} is a self-loop at bus position {ln.from_bus}")
            for end in (ln.from_bus, ln.to_bus):
                if not 0 <= end < self.N:
                    raise GridError(f"line {k} references bus position {end} out of range")
            pair = frozenset((ln.from_bus, ln.to_bus))
            if pair in seen:
                raise GridError(f"duplicate line between positions {sorted(pair)}")
            seen.add(pair)
            if not (np.isfinite(ln.series_admittance) and np.isfinite(ln.shunt_admittance)):
                raise GridError(f"line {k} has a non-finite admittance")
        if not self.is_connected():
            log.warning("grid %r is not connected", self.name)

    @property
    def N(self) -> int:
        return len(self.buses)

    @property
    def E(self) -> int:
        return len(self.lines)

    @cached_property
    def incidence(self) -> tuple[tuple[int, ...], ...]:
        """Per-bus tuple of incident line indices (``E_n = len(incidence[n])``)."""
        inc = [[] for _ in range(self.N)]
        for k, ln in enumerate(self.lines):
            inc[ln.from_bus].append(k)
            inc[ln.to_bus].append(k)
        return tuple(tuple(x) for x in inc)

    @cached_property
    def directed_lines(self) -> np.ndarray:
        """``(2E, 3)`` array of (metering bus, far bus, line index).

        All lines in their stored orientation come first, then all reversed.
        """
        out = np.empty((2 * self.E, 3), dtype=int)
        for k, ln in enumerate(self.lines):
            out[k] = (ln.from_bus, ln.to_bus, k)
            out[self.E + k] = (ln.to_bus, ln.from_bus, k)
        return out

    def is_connected(self) -> bool:
        adj = [[] for _ in range(self.N)]
        for ln in self.lines:
            adj[ln.from_bus].append(ln.to_bus)
            adj[ln.to_bus].append(ln.from_bus)
        seen = {0}
        stack = [0]
        while stack:
            for m in adj[stack.pop()]:
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        return len(seen) == self.N

    def with_convention(self, convention: str) -> "GridModel":
        return GridModel(self.buses, self.lines, convention, self.name)

    @cached_property
    def admittance(self) -> np.ndarray:
        return build_admittance(self)

    @cached_property
    def forms(self) -> "QuadraticFormSet":
        return QuadraticFormSet.from_grid(self)

    def __repr__(self):
        return f"GridModel(name={self.name!r}, N={self.N}, E={self.E}, convention={self.admittance_convention!r})"


def build_admittance(grid: GridModel) -> np.ndarray:
    """Complex ``N x N`` admittance matrix under the grid's convention."""
    Y = np.zeros((grid.N, grid.N), dtype=complex)
    sign = -1.0 if grid.admittance_convention == "negated" else 1.0
    for ln in grid.lines:
        n, m, y, ys = ln.from_bus, ln.to_bus, ln.series_admittance, ln.shunt_admittance
        Y[n, m] -= y
        Y[m, n] -= y
        Y[n, n] += sign * (ys + y)
        Y[m, m] += sign * (ys + y)
    return Y


def _check_bus(grid: GridModel, n: int):
    if not 0 <= n < grid.N:
        raise IndexError(f"bus position {n} out of range for N={grid.N}")


def _power_blocks(G: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    P = np.block([[G, -B], [B, G]])
    Q = -np.block([[B, G], [-G, B]])
    return P, Q


def bus_matrices(grid: GridModel, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Dense ``(N_P,n, N_Q,n)`` so that ``P_n = v^T N_P,n v`` and ``Q_n = v^T N_Q,n v``."""
    _check_bus(grid, n)
    Yn = np.zeros_like(grid.admittance)
    Yn[n] = grid.admittance[n]
    return _power_blocks(Yn.real, Yn.imag)


def _line_admittance_matrix(grid: GridModel, n: int, m: int) -> np.ndarray:
    _check_bus(grid, n)
    _check_bus(grid, m)
    for ln in grid.lines:
        if {ln.from_bus, ln.to_bus} == {n, m}:
            break
    else:
        raise KeyError(f"no line between bus positions {n} and {m}")
    Ynm = np.zeros((grid.N, grid.N), dtype=complex)
    Ynm[n, n] += ln.series_admittance + ln.shunt_admittance
    Ynm[n, m] -= ln.series_admittance
    return Ynm


def line_matrices(grid: GridModel, n: int, m: int):
    """Dense ``(E_P,nm, E_Q,nm, C_I,nm, C_J,nm)`` for line {n, m} metered at bus ``n``."""
    Ynm = _line_admittance_matrix(grid, n, m)
    G, B = Ynm.real, Ynm.imag
    EP, EQ = _power_blocks(G, B)
    Z = np.zeros_like(G)
    CI = np.block([[G, Z], [Z, -B]])
    CJ = np.block([[B, Z], [Z, G]])
    return EP, EQ, CI, CJ


@dataclass(frozen=True)
class QuadraticFormSet:
    """Compact storage of every injection/flow quadratic form.

    Row ``k`` represents ``A_k = e_a u_k^T + e_{N+a} l_k^T`` with ``a = bus[k]``,
    ``u_k = upper[k]`` and ``l_k = lower[k]``, so ``v^T A_k v = v_a (u_k.v) +
    v_{N+a} (l_k.v)``.  Rows are in ensemble order: P_n (all buses), Q_n,
    P_d (all directed lines), Q_d.

    ``current`` is the constant ``4E x 2N`` matrix of the PMU current rows
    (I_d for all directed lines, then J_d).
    """

    bus: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    current: np.ndarray

    @classmethod
    def from_grid(cls, grid: GridModel) -> "QuadraticFormSet":
        N, E = grid.N, grid.E
        Y = grid.admittance
        D = grid.directed_lines
        # row n of e_n e_n^T Y for injections; row n of Y_nm for directed line (n, m)
        rows = np.zeros((N + 2 * E, N), dtype=complex)
        rows[:N] = Y
        meter = np.concatenate([np.arange(N), D[:, 0]])
        for d, (n, m, k) in enumerate(D):
            ln = grid.lines[k]
            rows[N + d, n] += ln.series_admittance + ln.shunt_admittance
            rows[N + d, m] -= ln.series_admittance
        G, B = rows.real, rows.imag
        p_up, p_lo = np.hstack([G, -B]), np.hstack([B, G])
        q_up, q_lo = np.hstack([-B, -G]), np.hstack([G, -B])
        inj = slice(0, N)
        flo = slice(N, N + 2 * E)
        upper = np.vstack([p_up[inj], q_up[inj], p_up[flo], q_up[flo]])
        lower = np.vstack([p_lo[inj], q_lo[inj], p_lo[flo], q_lo[flo]])
        bus = np.concatenate([meter[inj], meter[inj], meter[flo], meter[flo]])
        current = np.vstack([np.hstack([G[flo], -B[flo]]), np.hstack([B[flo], G[flo]])])
        for arr in (bus, upper, lower, current):
            arr.setflags(write=False)
        return cls(bus=bus, upper=upper, lower=lower, current=current)

    def dense(self, k: int, N: int) -> np.ndarray:
        """Materialize quadratic form ``k`` as a ``2N x 2N`` matrix."""
        A = np.zeros((2 * N, 2 * N))
        A[self.bus[k]] = self.upper[k]
        A[N + self.bus[k]] = self.lower[k]
        return A
