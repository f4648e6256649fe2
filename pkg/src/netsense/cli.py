"""Command line entry point: ``netsense {pcrb,optimize,ebc,sweep,verify}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .convex import TOL_ENV
from .ebc import BEAMFORMER_KINDS, make_plan, optimize_ebc, optimize_unreduced
from .errors import NetsenseError
from .fim import fim_to_csv, pcrb, pfim
from .fronthaul import rate_from_W
from .harness import SCHEMES, SweepSpec, sweep
from .optimizer import DesignPoint, DesignProblem, OptimizerConfig, alternate, init_feasible
from .scenario import draw_samples, load_scenario, make_scenario


def _scenario(path, full=False):
    sc = load_scenario(path) if path else make_scenario()
    if full:
        sc = sc.with_(Mt=8, Mr=16)
    return sc


def save_design(path, point: DesignPoint):
    np.savez(path, R=point.R, Tt=point.Tt, sigma2=point.sigma2)


def load_design(path, sigma2):
    with np.load(path) as z:
        return DesignPoint(np.asarray(z["R"], complex), np.asarray(z["Tt"], complex), sigma2)


def _print_design(prob, point, out):
    K = prob.K
    out(f"PCRB   {point.objective:.6e} km^2")
    out(f"APCRB  {point.objective / K:.6e} km^2")
    power = np.real(np.trace(point.R, axis1=-2, axis2=-1))
    out("power  " + " ".join(f"{p:.4g}" for p in power) + "  W")
    if np.all(np.isfinite(prob.cap)):
        out("rate   " + " ".join(f"{r:.4f}" for r in rate_from_W(prob.samples, point.R, point.Tt)) + "  bits")


def cmd_pcrb(args):
    sc = _scenario(args.scenario, args.full)
    ss = draw_samples(sc)
    prob = DesignProblem.from_scenario(sc, ss)
    if args.design:
        point = load_design(args.design, sc.sigma2)
    else:
        point, _ = init_feasible(prob)
    F = pfim(ss, point.R, W=point.Tt)
    point.objective = pcrb(F, sc.K)
    _print_design(prob, point, print)
    if args.fim_csv:
        fim_to_csv(F, args.fim_csv, sc.K)
    return 0


def _config(args):
    return OptimizerConfig(max_outer=args.max_outer, max_inner=args.max_inner)


def cmd_optimize(args):
    sc = _scenario(args.scenario, args.full)
    prob = DesignProblem.from_scenario(sc, draw_samples(sc))
    rep = alternate(prob, _config(args))
    _print_design(prob, rep.design, print)
    print(f"rounds {rep.outer_iterations}  termination {rep.termination}  {rep.wall_ms / 1e3:.1f} s")
    if rep.flags:
        print("flags  " + ", ".join(sorted(set(rep.flags))))
    if args.trace:
        rep.to_csv(args.trace)
    if args.design_out:
        save_design(args.design_out, rep.design)
    return 0


def cmd_ebc(args):
    sc = _scenario(args.scenario, args.full)
    ss = draw_samples(sc)
    rng = np.random.default_rng((sc.rng_seed, 2))
    snr = None if args.physical_snr else args.music_snr
    if args.kind == "identity":
        rep, plan = optimize_unreduced(sc, ss, _config(args), rng=rng, snapshots=args.music_snapshots, snr_db=snr)
    else:
        plan = make_plan(sc, ss, kind=args.kind, rng=rng, snapshots=args.music_snapshots, snr_db=snr)
        rep, plan = optimize_ebc(sc, ss, plan, _config(args))
    print(f"beamformers {plan.kind}, Lr = {plan.Lr}")
    print(f"PCRB   {rep.objective:.6e} km^2")
    print(f"APCRB  {rep.objective / sc.K:.6e} km^2")
    print(f"rounds {rep.outer_iterations}  termination {rep.termination}  {rep.wall_ms / 1e3:.1f} s")
    if args.trace:
        rep.to_csv(args.trace)
    if args.plan_out:
        Path(args.plan_out).write_text(plan.to_text())
    return 0


def cmd_sweep(args):
    spec = SweepSpec.from_file(args.spec)
    if args.output:
        spec.output = args.output
    if args.full:
        spec.full = True
    if args.workers:
        spec.workers = args.workers
    if args.no_timing:
        spec.timing = False
    rows = sweep(spec)
    bad = [r for r in rows if not r.ok]
    print(f"{len(rows)} rows written to {spec.output}" + (f", {len(bad)} failed" if bad else ""))
    return 0


def cmd_verify(args):
    from .verify import SUITES, run_all

    names = args.suite or list(SUITES)
    results = run_all(names)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="netsense",
        description="Posterior CRB evaluation and fronthaul-aware design for networked sensing.",
        epilog=f"Set {TOL_ENV}=gap[,feas] to override the interior-point tolerances.",
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log optimiser progress")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp):
        sp.add_argument("scenario", nargs="?", help="scenario YAML/JSON (default: built-in two-BS geometry)")
        sp.add_argument("--full", action="store_true", help="use 8 transmit and 16 receive antennas")

    def opt_args(sp):
        sp.add_argument("--max-outer", type=int, default=20)
        sp.add_argument("--max-inner", type=int, default=30)
        sp.add_argument("--trace", help="write the iteration trace CSV here")

    sp = sub.add_parser("pcrb", help="evaluate the PCRB of a design")
    scenario_args(sp)
    sp.add_argument("--design", help="design .npz (R, Tt); default is the feasible starting point")
    sp.add_argument("--fim-csv", help="dump the PFIM to this CSV")
    sp.set_defaults(func=cmd_pcrb)

    sp = sub.add_parser("optimize", help="joint transmit/compression design")
    scenario_args(sp)
    opt_args(sp)
    sp.add_argument("--design-out", help="save the design as .npz")
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("ebc", help="estimate, beamform, then compress")
    scenario_args(sp)
    opt_args(sp)
    sp.add_argument("--kind", choices=BEAMFORMER_KINDS, default="eigen")
    sp.add_argument("--music-snapshots", type=int, default=256)
    sp.add_argument("--music-snr", type=float, default=10.0, help="per-antenna SNR (dB) of the MUSIC probe")
    sp.add_argument("--physical-snr", action="store_true", help="probe at the scenario's own SNR instead")
    sp.add_argument("--plan-out", help="write angles and beamformers as JSON")
    sp.set_defaults(func=cmd_ebc)

    sp = sub.add_parser("sweep", help=f"parameter sweep over schemes {', '.join(SCHEMES)}")
    sp.add_argument("spec", help="sweep spec YAML")
    sp.add_argument("-o", "--output")
    sp.add_argument("--full", action="store_true")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--no-timing", action="store_true", help="write wall_ms as 0 for byte-stable output")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("verify", help="run the self-check suites")
    sp.add_argument("--suite", action="append", choices=["oracle", "surrogates", "invariance", "descent"])
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (NetsenseError, OSError, ValueError) as exc:
        print(f"netsense: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
