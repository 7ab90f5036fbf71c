"""Command line entry point: ``darse <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields

import numpy as np

from . import __version__
from .experiment import ALGORITHMS, PRESETS, Scenario, build_setup, load_replay, preset, run_experiment

log = logging.getLogger("darse")

# scenario fields exposed as flags, with their argparse types
_FLAG_TYPES = {"case": str, "convention": str, "I": int, "fraction": float, "sigma": float,
               "bad_count": int, "bad_factor": float, "T": int, "trajectory": str,
               "perturb_amplitude": float, "protocol": str, "beta": float, "link_failure_p": float,
               "sync_alpha": float, "exchanges": int, "exchange_rule": str, "K": int, "init_mode": str,
               "init_exchanges": int, "tol": float, "v_max": float, "cov_floor": float,
               "sigma_prior": float, "diffusion_exchanges": int}


def _scenario_args(p: argparse.ArgumentParser, seed_required: bool = False):
    p.add_argument("--config", help="scenario file (.json or .toml)")
    p.add_argument("--preset", choices=PRESETS, help="start from a named scenario")
    for name, typ in _FLAG_TYPES.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.add_argument("--pmu-areas", dest="pmu_areas", type=lambda s: [int(x) for x in s.split(",") if x],
                   default=None, help="comma-separated 0-based area ids")
    p.add_argument("--diffusion-alphas", dest="diffusion_alphas",
                   type=lambda s: [float(x) for x in s.split(",")], default=None)
    p.add_argument("--bad-persistent", dest="bad_persistent", action="store_true", default=None)
    p.add_argument("--second-pass", dest="second_pass", action="store_true", default=None)
    p.add_argument("--ridge-fallback", dest="ridge_fallback", action="store_true", default=None)
    p.add_argument("--seed", type=int, required=seed_required, default=None)
    p.add_argument("--out", default="darse-out", help="output directory")
    p.add_argument("--figures", action="store_true", help="also render PNG figures (needs matplotlib)")


def _scenario_from(args) -> Scenario:
    base = {}
    if args.config:
        base = Scenario.load(args.config).to_dict()
    elif args.preset:
        base = preset(args.preset).to_dict()
    names = {f.name for f in fields(Scenario)}
    over = {k: v for k, v in vars(args).items() if k in names and v is not None}
    return Scenario.from_dict({**base, **over})


def _emit(summary: dict, out: str, figures: bool):
    print("algorithm,t,k_final,val,mse_v,mse_theta")
    for alg, d in summary["algorithms"].items():
        for s in d["snapshots"]:
            print(f"{alg},{s['t']},{s['k_final']},{s['val']:.6g},{s['mse_v']:.6g},{s['mse_theta']:.6g}")
    for alg, err in summary["errors"].items():
        print(f"# {alg} failed: {err}", file=sys.stderr)
    if figures:
        from .report import render_figures
        for p in render_figures(out):
            print(f"# figure {p}", file=sys.stderr)
    print(f"# outputs in {out}", file=sys.stderr)


def cmd_simulate(args) -> int:
    sc = _scenario_from(args)
    algs = args.algorithm or ["darse"]
    summary = run_experiment(sc, algs, args.out)
    _emit(summary, args.out, args.figures)
    return 1 if summary["errors"] else 0


def cmd_compare(args) -> int:
    sc = _scenario_from(args)
    summary = run_experiment(sc, args.algorithm or list(ALGORITHMS), args.out)
    _emit(summary, args.out, args.figures)
    return 1 if summary["errors"] else 0


def cmd_replay(args) -> int:
    sc, snaps, schedules = load_replay(args.replay_dir)
    setup = build_setup(sc, snaps)
    summary = run_experiment(sc, args.algorithm or ["darse"], args.out, setup,
                             schedules if sc.protocol == "ure" else None)
    _emit(summary, args.out, args.figures)
    return 1 if summary["errors"] else 0


def cmd_validate_case(args) -> int:
    from .io import ParseError, parse_case

    try:
        case = parse_case(args.path)
        grid = case.to_grid()
    except (ParseError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    report = {"name": case.name, "N": grid.N, "E": grid.E, "connected": grid.is_connected(),
              "base_mva": case.base_mva, "unsupported": case.unsupported}
    print(json.dumps(report, indent=2))
    return 0


def cmd_analyze_constants(args) -> int:
    from .central import CovarianceEstimate
    from .convergence import ScheduleOverflow, analyze, perturbation_sampler, theorem1_bounds
    from dataclasses import asdict

    sc = _scenario_from(args)
    setup = build_setup(sc)
    snap = setup.snapshots[0]
    gam = CovarianceEstimate.prior(setup.masks, sc.prior_sigma).variances
    sampler = perturbation_sampler(snap.true_state, args.sample_scale, sc.v_max)
    try:
        c = analyze(setup.grid, setup.masks, snap.c, gam, sc.beta, args.L, args.xi, sampler,
                    args.samples, sc.seed, sc.exchange_rule if sc.exchange_rule == "increment" else "constant",
                    sc.K)
        report = asdict(c)
        report.update({k: v for k, v in theorem1_bounds(c).items() if k.startswith(("hyp", "kappa_limit"))})
    except ScheduleOverflow as e:
        report = {"error": str(e)}
    report["note"] = ("empirical: cost and Hessian extrema are sampled around the first true state; "
                      "N in C is the bus count")
    text = json.dumps(report, indent=2, default=float)
    print(text)
    if args.out:
        from pathlib import Path
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "constants.json").write_text(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="darse", description="Decentralized re-weighted state estimation via gossip")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("simulate", help="run one or more algorithms on a scenario")
    _scenario_args(s)
    s.add_argument("--algorithm", action="append", choices=ALGORITHMS)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="run all algorithms on shared snapshots and schedules")
    _scenario_args(c, seed_required=True)
    c.add_argument("--algorithm", action="append", choices=ALGORITHMS)
    c.set_defaults(func=cmd_compare)

    a = sub.add_parser("analyze-constants", help="JSON report of the convergence constants")
    _scenario_args(a)
    a.add_argument("--L", type=int, default=1)
    a.add_argument("--xi", type=float, default=0.25)
    a.add_argument("--samples", type=int, default=50)
    a.add_argument("--sample-scale", type=float, default=0.05)
    a.set_defaults(func=cmd_analyze_constants, out=None)

    v = sub.add_parser("validate-case", help="parse a case file and report its structure")
    v.add_argument("path")
    v.set_defaults(func=cmd_validate_case)

    r = sub.add_parser("replay", help="re-run algorithms on recorded snapshots and schedules")
    r.add_argument("replay_dir")
    r.add_argument("--algorithm", action="append", choices=ALGORITHMS)
    r.add_argument("--out", default="darse-replay")
    r.add_argument("--figures", action="store_true")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="warn")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
