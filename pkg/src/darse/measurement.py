"""Areas, measurement selection masks, noisy snapshots and whitening."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .grid import GridModel
from .power_flow import EnsembleLayout, evaluate_f

log = logging.getLogger(__name__)

CATEGORIES = ("voltage", "current", "injection", "flow")


class Ownership(str, Enum):
    """Which area owns the measurements of a directed line.

    ``METERING_BUS``: the area of the bus where the line quantity is metered.
    ``LINE_FROM``: the area of the line's stored from-bus, for both directions.
    """

    METERING_BUS = "metering_bus"
    LINE_FROM = "line_from"


@dataclass(frozen=True)
class AreaPartition:
    area_of_bus: np.ndarray

    @property
    def I(self) -> int:
        return int(self.area_of_bus.max()) + 1

    def buses(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.area_of_bus == i)

    @property
    def sizes(self) -> list[int]:
        return [len(self.buses(i)) for i in range(self.I)]


@dataclass(frozen=True)
class SelectionMask:
    """Global ensemble rows recorded by one area, in ensemble order."""

    area: int
    rows: np.ndarray
    layout: EnsembleLayout

    @property
    def size(self) -> int:
        return len(self.rows)

    def category(self, name: str) -> np.ndarray:
        s = getattr(self.layout, name)
        return self.rows[(self.rows >= s.start) & (self.rows < s.stop)]

    def category_sizes(self) -> dict[str, int]:
        return {c: len(self.category(c)) for c in CATEGORIES}

    def matrix(self) -> np.ndarray:
        """Dense selection matrix ``T_i`` (``M_i x M``)."""
        T = np.zeros((self.size, self.layout.M))
        T[np.arange(self.size), self.rows] = 1.0
        return T

    def voltage_coordinates(self) -> np.ndarray:
        """State coordinates directly measured by this area's PMUs."""
        return self.category("voltage") - self.layout.voltage.start


def partition_sizes(N: int, I: int) -> list[int]:
    """``I - 1`` areas of ``ceil(N / I)`` buses and one with the remainder, when that fits."""
    if not 1 <= I <= N:
        raise ValueError(f"need 1 <= I <= N, got I={I}, N={N}")
    big = math.ceil(N / I)
    rest = N - (I - 1) * big
    if rest >= 1:
        return [big] * (I - 1) + [rest]
    return [len(a) for a in np.array_split(np.arange(N), I)]


def partition_areas(N: int, I: int, seed: int = 0) -> AreaPartition:
    sizes = partition_sizes(N, I)
    perm = rngmod.stream(seed, "partition").permutation(N)
    area = np.empty(N, dtype=int)
    start = 0
    for i, s in enumerate(sizes):
        area[perm[start:start + s]] = i
        start += s
    return AreaPartition(area)


def row_owners(grid: GridModel, partition: AreaPartition,
               policy: Ownership = Ownership.METERING_BUS) -> np.ndarray:
    """Area id owning every ensemble row."""
    lay = EnsembleLayout.of(grid)
    N, E = grid.N, grid.E
    a = partition.area_of_bus
    D = grid.directed_lines
    if Ownership(policy) is Ownership.METERING_BUS:
        line_bus = D[:, 0]
    else:
        line_bus = np.array([grid.lines[k].from_bus for k in D[:, 2]], dtype=int)
    owners = np.empty(lay.M, dtype=int)
    owners[lay.voltage] = np.tile(a, 2)
    owners[lay.current] = np.tile(a[line_bus], 2)
    owners[lay.injection] = np.tile(a, 2)
    owners[lay.flow] = np.tile(a[line_bus], 2)
    assert owners[lay.current].size == 4 * E and owners[lay.voltage].size == 2 * N
    return owners


def select_measurements(grid: GridModel, partition: AreaPartition, fraction: float = 1.0,
                        pmu_areas: Sequence[int] | None = None, seed: int = 0,
                        policy: Ownership = Ownership.METERING_BUS,
                        pmu_currents: bool = True) -> list[SelectionMask]:
    """Per-area masks: a random ``fraction`` of owned SCADA rows, all owned PMU rows in ``pmu_areas``.

    ``pmu_areas=None`` means every area has PMUs.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    lay = EnsembleLayout.of(grid)
    owners = row_owners(grid, partition, policy)
    pmu = set(range(partition.I)) if pmu_areas is None else set(pmu_areas)
    rows_all = np.arange(lay.M)
    scada = rows_all >= lay.quadratic.start
    masks = []
    for i in range(partition.I):
        own = owners == i
        chosen = []
        if i in pmu:
            chosen.append(rows_all[own & (rows_all < lay.voltage.stop)])
            if pmu_currents:
                chosen.append(rows_all[own & (rows_all >= lay.current.start) & (rows_all < lay.current.stop)])
        cand = rows_all[own & scada]
        n_keep = int(round(fraction * len(cand)))
        pick = rngmod.stream(seed, "selection", i).choice(cand, size=n_keep, replace=False)
        chosen.append(pick)
        rows = np.sort(np.concatenate(chosen).astype(int))
        if rows.size == 0:
            log.warning("area %d records no measurements", i)
        masks.append(SelectionMask(i, rows, lay))
    return masks


@dataclass(frozen=True)
class NoiseSpec:
    base_sigma: float
    bad_count: int = 0
    bad_variance_factor: float = 100.0
    seed: int = 0
    persistent: bool = False

    def __post_init__(self):
        if self.base_sigma < 0:
            raise ValueError("base_sigma must be non-negative")
        if self.bad_count < 0:
            raise ValueError("bad_count must be non-negative")


@dataclass
class Snapshot:
    t: int
    true_state: np.ndarray
    z: np.ndarray
    c: list[np.ndarray]
    variances: np.ndarray
    bad_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "true_state": self.true_state.tolist(),
            "z": self.z.tolist(),
            "c": [ci.tolist() for ci in self.c],
            "variances": self.variances.tolist(),
            "bad_rows": self.bad_rows.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Snapshot":
        return cls(
            t=int(d["t"]),
            true_state=np.asarray(d["true_state"], dtype=float),
            z=np.asarray(d["z"], dtype=float),
            c=[np.asarray(ci, dtype=float) for ci in d["c"]],
            variances=np.asarray(d["variances"], dtype=float),
            bad_rows=np.asarray(d["bad_rows"], dtype=int),
        )


def synthesize_snapshot(grid: GridModel, v_true, masks: Sequence[SelectionMask],
                        noise: NoiseSpec, t: int = 0) -> Snapshot:
    """``z = f(v_true) + r`` with ``bad_count`` selected rows inflated to ``factor * sigma^2``."""
    v_true = np.asarray(v_true, dtype=float)
    f = evaluate_f(grid, v_true)
    var = np.full(f.shape, float(noise.base_sigma) ** 2)
    selected = np.unique(np.concatenate([m.rows for m in masks])) if masks else np.zeros(0, int)
    if noise.bad_count > selected.size:
        raise ValueError(f"bad_count={noise.bad_count} exceeds {selected.size} selected rows")
    bad_keys = () if noise.persistent else (t,)
    bad = np.sort(rngmod.stream(noise.seed, "bad_data", *bad_keys)
                  .choice(selected, size=noise.bad_count, replace=False)).astype(int)
    var[bad] *= noise.bad_variance_factor
    z = f + np.sqrt(var) * rngmod.stream(noise.seed, "noise", t).standard_normal(f.shape)
    return Snapshot(t=t, true_state=v_true.copy(), z=z, c=[z[m.rows] for m in masks],
                    variances=var, bad_rows=bad)


def whiten_area(c, gamma) -> np.ndarray:
    """``c / sqrt(gamma)`` for a diagonal weight given as a vector."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma <= 0):
        raise ValueError("whitening weights must be positive")
    return np.asarray(c, dtype=float) / np.sqrt(gamma)
