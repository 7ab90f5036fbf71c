"""Measurement function ``f(v)``, its Jacobian and the Jacobian Lipschitz constant.

Ensemble layout (length ``M = 4N + 8E``)::

    V  [0, 2N)            Re V_1..Re V_N, Im V_1..Im V_N
    C  [2N, 2N+4E)        I_d for every directed line d, then J_d
    I  [2N+4E, 4N+4E)     P_n for every bus, then Q_n
    F  [4N+4E, 4N+8E)     P_d for every directed line d, then Q_d

Directed lines are ordered as in :attr:`GridModel.directed_lines`: every line in
its stored orientation, then every line reversed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import GridModel


@dataclass(frozen=True)
class EnsembleLayout:
    N: int
    E: int

    @classmethod
    def of(cls, grid: GridModel) -> "EnsembleLayout":
        return cls(grid.N, grid.E)

    @property
    def M(self) -> int:
        return 4 * self.N + 8 * self.E

    @property
    def voltage(self) -> slice:
        return slice(0, 2 * self.N)

    @property
    def current(self) -> slice:
        return slice(2 * self.N, 2 * self.N + 4 * self.E)

    @property
    def injection(self) -> slice:
        return slice(2 * self.N + 4 * self.E, 4 * self.N + 4 * self.E)

    @property
    def flow(self) -> slice:
        return slice(4 * self.N + 4 * self.E, self.M)

    @property
    def quadratic(self) -> slice:
        return slice(2 * self.N + 4 * self.E, self.M)

    @property
    def linear(self) -> slice:
        return slice(0, 2 * self.N + 4 * self.E)

    def section(self, row: int) -> str:
        for name in ("voltage", "current", "injection", "flow"):
            s = getattr(self, name)
            if s.start <= row < s.stop:
                return name
        raise IndexError(row)


class MeasurementModel:
    """Row-wise representation of ``f``: ``f_r(v) = a_r.v + v_{p_r}(u_r.v) + v_{s_r}(l_r.v)``.

    Linear rows have ``u_r = l_r = 0``.  Built once per grid and cached.
    """

    def __init__(self, grid: GridModel):
        forms = grid.forms
        lay = EnsembleLayout.of(grid)
        n2 = 2 * grid.N
        self.layout = lay
        self.N = grid.N
        self.linear = np.zeros((lay.M, n2))
        self.linear[lay.voltage] = np.eye(n2)
        self.linear[lay.current] = forms.current
        self.upper = np.zeros((lay.M, n2))
        self.lower = np.zeros((lay.M, n2))
        self.upper[lay.quadratic] = forms.upper
        self.lower[lay.quadratic] = forms.lower
        self.primary = np.zeros(lay.M, dtype=int)
        self.primary[lay.quadratic] = forms.bus
        self.secondary = self.primary + grid.N
        self.is_quadratic = np.zeros(lay.M, dtype=bool)
        self.is_quadratic[lay.quadratic] = True
        for arr in (self.linear, self.upper, self.lower, self.primary, self.secondary):
            arr.setflags(write=False)

    def _rows(self, rows):
        return slice(None) if rows is None else np.asarray(rows, dtype=int)

    def evaluate(self, v: np.ndarray, rows=None) -> np.ndarray:
        v = _check_state(v, self.N)
        r = self._rows(rows)
        out = self.linear[r] @ v
        q = self.is_quadratic[r]
        if np.any(q):
            idx = np.arange(len(self.primary))[r][q]
            out[q] += v[self.primary[idx]] * (self.upper[idx] @ v) + v[self.secondary[idx]] * (self.lower[idx] @ v)
        return out

    def jacobian(self, v: np.ndarray, rows=None) -> np.ndarray:
        v = _check_state(v, self.N)
        r = self._rows(rows)
        J = np.array(self.linear[r], dtype=float)
        q = self.is_quadratic[r]
        if np.any(q):
            idx = np.arange(len(self.primary))[r][q]
            U, L = self.upper[idx], self.lower[idx]
            p, s = self.primary[idx], self.secondary[idx]
            # d/dv [v^T A v] = v^T A + (A v)^T with A = e_p u^T + e_s l^T
            Jq = v[p][:, None] * U + v[s][:, None] * L
            k = np.arange(len(idx))
            np.add.at(Jq, (k, p), U @ v)
            np.add.at(Jq, (k, s), L @ v)
            J[q] = Jq
        return J


def _check_state(v, N: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (2 * N,):
        raise ValueError(f"state must have shape ({2 * N},), got {v.shape}")
    return v


def measurement_model(grid: GridModel) -> MeasurementModel:
    model = grid.__dict__.get("_measurement_model")
    if model is None:
        model = MeasurementModel(grid)
        grid.__dict__["_measurement_model"] = model
    return model


def evaluate_f(grid: GridModel, v, rows=None) -> np.ndarray:
    """Noise-free measurement ensemble (or the subset ``rows``) at state ``v``."""
    return measurement_model(grid).evaluate(v, rows)


def jacobian(grid: GridModel, v, rows=None) -> np.ndarray:
    """Analytic Jacobian ``F(v)`` (``M x 2N``, or ``len(rows) x 2N``)."""
    return measurement_model(grid).jacobian(v, rows)


def lipschitz_matrix(grid: GridModel) -> np.ndarray:
    """``M = H_I^T H_I + H_F^T H_F``, the sum of ``S_k^2`` over the symmetrized forms.

    Each ``S_k = A_k + A_k^T`` factors as ``B_k X B_k^T`` with
    ``B_k = [e_p, e_s, u_k, l_k]`` and ``X`` the block swap, so
    ``S_k^2 = B_k X (B_k^T B_k) X B_k^T``.
    """
    forms = grid.forms
    N, K = grid.N, len(forms.bus)
    B = np.zeros((K, 2 * N, 4))
    k = np.arange(K)
    B[k, forms.bus, 0] = 1.0
    B[k, forms.bus + N, 1] = 1.0
    B[:, :, 2] = forms.upper
    B[:, :, 3] = forms.lower
    swap = np.zeros((4, 4))
    swap[0, 2] = swap[2, 0] = swap[1, 3] = swap[3, 1] = 1.0
    gram = np.einsum("kip,kiq->kpq", B, B)
    X = swap @ gram @ swap
    C = np.einsum("kip,kpq->kiq", B, X)
    return np.tensordot(C, B, axes=([0, 2], [0, 2]))


def lipschitz_constant(grid: GridModel, gammas: Sequence[np.ndarray]) -> float:
    """``omega = max_i sqrt(||M|| / lambda_min(Gamma_i))`` for diagonal weights ``Gamma_i``.

    Areas with no measurements are skipped.
    """
    lam_min = []
    for g in gammas:
        g = np.asarray(g, dtype=float)
        if np.any(g <= 0):
            raise ValueError("Gamma diagonal entries must be positive")
        if g.size:
            lam_min.append(g.min())
    if not lam_min:
        return 0.0
    M = lipschitz_matrix(grid)
    norm = float(np.max(np.abs(np.linalg.eigvalsh(M)))) if M.size else 0.0
    return float(np.sqrt(norm / min(lam_min)))
