"""Scenario configuration and experiment orchestration.

Scenario keys (JSON or TOML, flat; every key optional, defaults below)::

    case               built-in name ("case14", "case118") or path to .m/.json
    convention         admittance convention, "negated" or "standard"
    I                  number of areas
    fraction           share of owned SCADA rows each area records
    pmu_areas          0-based area ids holding PMUs (null: all areas)
    sigma              base noise standard deviation (p.u.)
    bad_count          bad entries per snapshot
    bad_factor         variance inflation of bad entries
    bad_persistent     keep the same bad rows in every snapshot
    T                  number of snapshots
    trajectory         "static" or "perturb"
    perturb_amplitude  max per-step coordinate drift, relative to the largest base coordinate
    protocol           "sync" (W = I - wL over the overlay) or "ure"
    beta               URE mixing weight
    link_failure_p     independent per-exchange link failure probability
    sync_alpha         alpha of the synchronous weight matrix
    exchanges          exchanges per GN update (minimum when exchange_rule="increment")
    exchange_rule      "constant" or "increment"
    K                  GN updates per snapshot
    init_mode          DARSE initializer
    init_exchanges     exchanges for the PMU initializer (null: same as exchanges)
    tol, v_max, cov_floor, second_pass, ridge_fallback   solver options
    sigma_prior        prior weight std for the first snapshot (null: sigma)
    diffusion_alphas   alpha0 values of the diffusion baseline
    diffusion_exchanges  diffusion rounds per snapshot
    seed               master seed (partition, selection, noise, gossip)
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .central import CovarianceEstimate, GNOptions, arse_step, cost
from .diffusion import DEFAULT_STEP_SCALES, DiffusionConfig, diffusion_snapshot
from .ggn import DarseConfig, darse_snapshot, flat_profile, pmu_init_centralized
from .gossip import (URE, ExactAverage, GossipConfig, GraphSequence, Replay, Synchronous,
                     complete_overlay, synchronous_weight_matrix)
from .io import CaseFile, parse_case
from .measurement import NoiseSpec, Snapshot, partition_areas, select_measurements, synthesize_snapshot
from .metrics import CSV_COLUMNS, compute_metrics

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

ALGORITHMS = ("darse", "central_gn", "central_gn_noreweight", "diffusion")
SCHEMA_VERSION = 1


@dataclass
class Scenario:
    case: str = "case118"
    convention: str = "negated"
    I: int = 10
    fraction: float = 0.5
    pmu_areas: list[int] | None = field(default_factory=lambda: [0, 1, 2])
    sigma: float = 1e-3
    bad_count: int = 0
    bad_factor: float = 100.0
    bad_persistent: bool = False
    T: int = 3
    trajectory: str = "perturb"
    perturb_amplitude: float = 0.01
    protocol: str = "sync"
    beta: float = 0.5
    link_failure_p: float = 0.0
    sync_alpha: float = 0.03
    exchanges: int = 10
    exchange_rule: str = "constant"
    K: int = 20
    init_mode: str = "pmu_decentralized"
    init_exchanges: int | None = None
    tol: float = 1e-8
    v_max: float = 1.5
    cov_floor: float = 1e-8
    second_pass: bool = False
    ridge_fallback: bool = False
    sigma_prior: float | None = None
    diffusion_alphas: list[float] = field(default_factory=lambda: list(DEFAULT_STEP_SCALES))
    diffusion_exchanges: int = 200
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.I < 1:
            problems.append("I must be >= 1")
        if not 0 < self.fraction <= 1:
            problems.append("fraction must be in (0, 1]")
        if self.sigma < 0:
            problems.append("sigma must be >= 0")
        if self.T < 1:
            problems.append("T must be >= 1")
        if self.trajectory not in ("static", "perturb"):
            problems.append("trajectory must be 'static' or 'perturb'")
        if self.protocol not in ("sync", "ure", "exact"):
            problems.append("protocol must be 'sync', 'ure' or 'exact'")
        if self.pmu_areas is not None and any(not 0 <= a < self.I for a in self.pmu_areas):
            problems.append("pmu_areas must be 0-based ids below I")
        if self.case not in ("case14", "case118") and not Path(self.case).exists():
            problems.append(f"case file {self.case!r} not found")
        if problems:
            raise ValueError("invalid scenario: " + "; ".join(problems))

    @property
    def prior_sigma(self) -> float:
        return self.sigma if self.sigma_prior is None else self.sigma_prior

    def gn_options(self) -> GNOptions:
        return GNOptions(max_iters=self.K, tol=self.tol, v_max=self.v_max, cov_floor=self.cov_floor,
                         second_pass=self.second_pass)

    def darse_config(self) -> DarseConfig:
        return DarseConfig(K=self.K, exchanges=self.exchanges, exchange_rule=self.exchange_rule,
                           init_mode=self.init_mode, init_exchanges=self.init_exchanges,
                           gn=self.gn_options(), ridge_fallback=self.ridge_fallback)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "Scenario":
        p = Path(path)
        if p.suffix.lower() == ".toml":
            d = tomllib.loads(p.read_text())
        else:
            d = json.loads(p.read_text())
        return cls.from_dict(d)


def preset(name: str, **overrides) -> Scenario:
    """Named scenarios: ``tracking`` (3 clean snapshots, synchronous exchanges),
    ``bad-data`` (6 snapshots, 25 bad entries, random exchanges with link
    failures) and ``smoke`` (small and fast)."""
    if name == "tracking":
        base = {}
    elif name == "bad-data":
        base = dict(T=6, bad_count=25, protocol="ure", beta=0.5, link_failure_p=0.1, exchanges=200,
                    second_pass=True, cov_floor=1e-6)
    elif name == "smoke":
        base = dict(case="case14", I=2, pmu_areas=[0], T=2, K=5, protocol="ure", exchanges=40,
                    diffusion_exchanges=20,
                    diffusion_alphas=[0.01])
    else:
        raise ValueError(f"unknown preset {name!r}")
    return Scenario(**{**base, **overrides})


PRESETS = ("tracking", "bad-data", "smoke")


def make_trajectory(case: CaseFile, mode: str, T: int, seed: int = 0, amplitude: float = 0.01):
    """True states: the base state repeated, or a bounded random walk from it.

    In ``perturb`` mode each step moves every coordinate by at most
    ``amplitude * max|base coordinate|``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    base = case.base_state()
    if mode == "static":
        return [base.copy() for _ in range(T)]
    if mode != "perturb":
        raise ValueError(f"unknown trajectory mode {mode!r}")
    scale = float(np.max(np.abs(base))) if base.size else 0.0
    rng = rngmod.stream(seed, "trajectory")
    out = [base.copy()]
    for _ in range(1, T):
        out.append(out[-1] + amplitude * scale * rng.uniform(-1.0, 1.0, base.size))
    return out


@dataclass
class Setup:
    scenario: Scenario
    case: CaseFile
    grid: object
    partition: object
    masks: list
    snapshots: list[Snapshot]


def build_setup(sc: Scenario, snapshots: list[Snapshot] | None = None) -> Setup:
    case = parse_case(sc.case)
    for note in case.unsupported:
        log.info("case: %s", note)
    grid = case.to_grid(sc.convention)
    part = partition_areas(grid.N, sc.I, sc.seed)
    masks = select_measurements(grid, part, sc.fraction, sc.pmu_areas, sc.seed)
    if snapshots is None:
        states = make_trajectory(case, sc.trajectory, sc.T, sc.seed, sc.perturb_amplitude)
        noise = NoiseSpec(sc.sigma, sc.bad_count, sc.bad_factor, sc.seed, sc.bad_persistent)
        snapshots = [synthesize_snapshot(grid, v, masks, noise, t) for t, v in enumerate(states)]
    return Setup(sc, case, grid, part, masks, snapshots)


def make_protocol(sc: Scenario, schedules: dict[int, GraphSequence] | None = None):
    if schedules is not None:
        return Replay(schedules, sc.beta)
    if sc.protocol == "ure":
        return URE(GossipConfig(sc.I, sc.beta, sc.link_failure_p, sc.seed))
    if sc.protocol == "exact":
        return ExactAverage()
    return Synchronous(complete_overlay(sc.I), sc.sync_alpha, sc.link_failure_p, sc.seed)


# Algorithm runners ---------------------------------------------------------------

def _global_row(rows):
    return next(r for r in reversed(rows) if r["agent"] == -1)


def run_darse(setup: Setup, protocol=None, reference: bool = False):
    sc = setup.scenario
    protocol = protocol or make_protocol(sc)
    cfg = sc.darse_config()
    cov = CovarianceEstimate.prior(setup.masks, sc.prior_sigma)
    s_v, rows, per_snap = None, [], []
    for snap in setup.snapshots:
        t0 = time.perf_counter()
        res = darse_snapshot(setup.grid, setup.masks, snap, cov, cfg, protocol, s_v, reference)
        wall = time.perf_counter() - t0
        rows += res.rows
        last_k = max(r["k"] for r in res.rows)
        finals = [r for r in res.rows if r["k"] == last_k]
        g = _global_row(finals)
        info = {"t": snap.t, "k_final": last_k, "val": g["val"], "mse_v": g["mse_v"] / sc.I,
                "mse_theta": g["mse_theta"] / sc.I, "spread": g["spread"],
                "agent_cost": [r["cost"] for r in finals if r["agent"] >= 0],
                "agent_mse_v": [r["mse_v"] for r in finals if r["agent"] >= 0],
                "agent_mse_theta": [r["mse_theta"] for r in finals if r["agent"] >= 0],
                "val_by_k": {int(k): _global_row([r for r in res.rows if r["k"] == k])["val"]
                             for k in sorted({r["k"] for r in res.rows})},
                "frozen_total": sum(len(rep.frozen) for rep in res.reports), "wall_time": wall}
        if reference:
            info["reference_cost"] = res.reference_cost
        per_snap.append(info)
        cov, s_v = res.covariance, res.estimates
    return rows, per_snap, protocol


def run_central(setup: Setup, reweight: bool = True):
    sc = setup.scenario
    opts = sc.gn_options()
    if not reweight:
        opts = GNOptions(**{**opts.__dict__, "second_pass": False})
    prior = CovarianceEstimate.prior(setup.masks, sc.prior_sigma)
    prev, v_prev = None, flat_profile(setup.grid.N)
    rows, per_snap = [], []
    for snap in setup.snapshots:
        t0 = time.perf_counter()
        v_init = pmu_init_centralized(setup.masks, snap.c, v_prev)
        gam = (prev if reweight and prev is not None else prior).variances
        v_hat, cov, trace = arse_step(prev if reweight else None, snap, setup.grid, setup.masks, opts,
                                      v_init, sc.prior_sigma, keep_states=True)
        wall = time.perf_counter() - t0
        for tr in trace:
            for m in compute_metrics(snap.true_state, [tr["v"]], None, None, None, None, snap.t, tr["iter"]):
                if m.agent == 0:
                    d = m.as_dict()
                    d["val"] = tr["cost"]
                    rows.append(d)
        mv, mt = rows[-1]["mse_v"], rows[-1]["mse_theta"]
        per_snap.append({"t": snap.t, "k_final": trace[-1]["iter"], "val": trace[-1]["cost"],
                         "val_initial_weights": cost(setup.grid, setup.masks, snap.c, gam, v_hat),
                         "mse_v": mv, "mse_theta": mt, "wall_time": wall})
        prev, v_prev = cov, v_hat
    return rows, per_snap


def run_diffusion(setup: Setup, alpha0: float):
    """Diffusion over the synchronous overlay; each agent starts from the PMU merge of its previous iterate."""
    sc = setup.scenario
    W = synchronous_weight_matrix(complete_overlay(sc.I), sc.sync_alpha)
    gam = CovarianceEstimate.prior(setup.masks, sc.prior_sigma).variances
    cfg = DiffusionConfig(alpha0, sc.diffusion_exchanges, sc.v_max)
    prev = [flat_profile(setup.grid.N)] * sc.I
    rows, per_snap = [], []
    for snap in setup.snapshots:
        t0 = time.perf_counter()
        v0 = [pmu_init_centralized(setup.masks, snap.c, s) for s in prev]
        V, checkpoints = diffusion_snapshot(setup.grid, setup.masks, snap, gam, W, v0, cfg)
        wall = time.perf_counter() - t0
        for ell, Vl in checkpoints:
            for m in compute_metrics(snap.true_state, list(Vl), setup.masks, snap.c, gam, setup.grid,
                                     snap.t, ell):
                rows.append(m.as_dict())
        g = _global_row(rows)
        per_snap.append({"t": snap.t, "k_final": cfg.exchanges, "val": g["val"], "mse_v": g["mse_v"] / sc.I,
                         "mse_theta": g["mse_theta"] / sc.I, "spread": g["spread"], "wall_time": wall})
        prev = list(V)
    return rows, per_snap


# Output --------------------------------------------------------------------------

def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(rows) -> str:
    import io as _io
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(r[k])) if k in ("val", "mse_v", "mse_theta", "spread") else int(r[k]))
                    for k in CSV_COLUMNS})
    return buf.getvalue()


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_replay(out: Path, setup: Setup, protocol) -> dict:
    rdir = out / "replay"
    hashes = {}
    snap_path = rdir / "snapshots.json"
    _atomic_write(snap_path, json.dumps({"schema": SCHEMA_VERSION, "scenario": setup.scenario.to_dict(),
                                         "snapshots": [s.to_dict() for s in setup.snapshots]}))
    hashes[snap_path.name] = sha256(snap_path)
    for t, seq in sorted(getattr(protocol, "history", {}).items()):
        p = rdir / f"schedule_t{t}.jsonl"
        rdir.mkdir(parents=True, exist_ok=True)
        seq.dump_jsonl(p, {"t": t, "beta": setup.scenario.beta})
        hashes[p.name] = sha256(p)
    return hashes


def load_replay(rdir) -> tuple[Scenario, list[Snapshot], dict[int, GraphSequence]]:
    rdir = Path(rdir)
    d = json.loads((rdir / "snapshots.json").read_text())
    sc = Scenario.from_dict(d["scenario"])
    snaps = [Snapshot.from_dict(s) for s in d["snapshots"]]
    schedules = {}
    for p in sorted(rdir.glob("schedule_t*.jsonl")):
        schedules[int(p.stem.split("_t")[1])] = GraphSequence.load_jsonl(p)
    return sc, snaps, schedules


def _figure_data(results: dict) -> dict[str, str]:
    """One long-format CSV per metric with the global (network) row of every algorithm."""
    out = {}
    for metric in ("val", "mse_v", "mse_theta"):
        lines = ["algorithm,t,k,value"]
        for alg, rows in results.items():
            for r in rows:
                if r["agent"] in (-1,) or (alg.startswith("central") and r["agent"] == 0):
                    lines.append(f"{alg},{r['t']},{r['k']},{float(r[metric])!r}")
        out[f"fig_{metric}.csv"] = "\n".join(lines) + "\n"
    return out


def run_experiment(scenario: Scenario, algorithms=ALGORITHMS, out_dir=None, setup: Setup | None = None,
                   schedules: dict[int, GraphSequence] | None = None, reference: bool = True) -> dict:
    """Run the requested algorithms on shared snapshots; write outputs when ``out_dir`` is given.

    Returns the summary dictionary (also written as ``summary.json``).
    """
    for a in algorithms:
        if a not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {a!r}")
    setup = setup or build_setup(scenario)
    summary = {"schema": SCHEMA_VERSION, "scenario": scenario.to_dict(),
               "masks": [int(m.size) for m in setup.masks], "algorithms": {}, "errors": {}}
    results = {}
    protocol = None
    for alg in algorithms:
        try:
            if alg == "darse":
                protocol = make_protocol(scenario, schedules)
                rows, snaps, protocol = run_darse(setup, protocol, reference)
                results[alg] = rows
                summary["algorithms"][alg] = {"k_unit": "update", "snapshots": snaps}
            elif alg in ("central_gn", "central_gn_noreweight"):
                rows, snaps = run_central(setup, reweight=(alg == "central_gn"))
                results[alg] = rows
                summary["algorithms"][alg] = {"k_unit": "iteration", "snapshots": snaps}
            else:
                for a0 in scenario.diffusion_alphas:
                    name = f"diffusion_a{a0:g}"
                    rows, snaps = run_diffusion(setup, a0)
                    results[name] = rows
                    summary["algorithms"][name] = {"k_unit": "exchange", "alpha0": a0, "snapshots": snaps}
        except (np.linalg.LinAlgError, FloatingPointError, ValueError) as e:
            log.error("%s failed: %s", alg, e)
            summary["errors"][alg] = str(e)
    if out_dir is not None:
        out = Path(out_dir)
        hashes = write_replay(out, setup, protocol) if protocol is not None else write_replay(out, setup, ExactAverage())
        summary["replay_hashes"] = hashes
        for name, rows in results.items():
            _atomic_write(out / f"metrics_{name}.csv", _csv_text(rows))
        for fname, text in _figure_data(results).items():
            _atomic_write(out / "figures" / fname, text)
        _atomic_write(out / "summary.json", json.dumps(summary, indent=2, default=float))
    summary["_rows"] = results
    return summary
