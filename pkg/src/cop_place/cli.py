"""``cop-place`` command-line interface."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .estimator import GnOptions, gauss_newton, pmu_initializer, tve
from .gain import GainModel
from .grid import CaseParseError, GridValidationError, build_constant_matrices, load_case
from .measurements import Placement, Sigmas, random_true_state, sample_scada, selection_mask, synthesize_measurements
from .placement import (
    PlacementInfeasibleError,
    PlacementProblem,
    baseline_accuracy,
    baseline_observability,
    build_sdp,
    exhaustive_optimal,
    place_sdp,
)
from .sdp import read_sdpa, solve, write_sdpa

logger = logging.getLogger("cop_place")

PLACE_METHODS = ("sdp", "exhaustive", "accuracy", "observability")


def _global_flags(parser, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--case", default=d("ieee14"), help="built-in case name or path to a .m/.json file")
    parser.add_argument("--seed", type=int, default=d(0))
    parser.add_argument("--out", default=d("results"), help="output directory")
    parser.add_argument("--json", action="store_true", default=d(False), help="print a JSON summary on stdout")
    parser.add_argument("-v", "--verbose", action="count", default=d(0))


def _common_model_flags(p):
    p.add_argument("--scada-fraction", type=float, default=0.15)
    p.add_argument("--sigma2", type=float, default=1e-4, help="measurement noise variance")
    p.add_argument("--beta-min", type=float, default=0.01)


def _pmu_range(text):
    try:
        lo, hi = (int(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LO:HI") from None
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError("need 1 <= LO <= HI")
    return lo, hi


def _methods(text):
    return tuple(m.strip() for m in text.split(",") if m.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cop-place", description="PMU placement and hybrid state estimation toolkit")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        p = sub.add_parser(name, **kw)
        _global_flags(p, suppress=True)
        return p

    p = add("sweep", help="COP metric of every method over the PMU budget")
    _common_model_flags(p)
    p.add_argument("--methods", type=_methods, default=ex.SWEEP_METHODS)
    p.add_argument("--pmu-range", type=_pmu_range, default=None, metavar="LO:HI")
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--exhaustive-limit", type=int, default=ex.MAX_EXHAUSTIVE)

    p = add("tve", help="Monte-Carlo Gauss-Newton convergence study")
    _common_model_flags(p)
    p.add_argument("--n-pmu", type=int, default=None)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--perturbation", type=float, default=0.1)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--tve-threshold", type=float, default=0.1, help="TVE level in percent")
    p.add_argument("--methods", type=_methods, default=ex.TVE_METHODS)
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--fixed-scada", action="store_true", help="one SCADA draw for all trials")
    p.add_argument("--trace-dir", default=None)

    p = add("place", help="compute one placement")
    _common_model_flags(p)
    p.add_argument("--n-pmu", type=int, required=True)
    p.add_argument("--method", choices=PLACE_METHODS, default="sdp")
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--costs", default=None, help="comma-separated per-bus PMU costs")
    p.add_argument("--cost-cap", type=float, default=None)
    p.add_argument("--dump-sdp", default=None, metavar="PATH", help="write the placement program in SDPA format")

    p = add("estimate", help="one Gauss-Newton run on synthetic measurements")
    _common_model_flags(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--pmu", default=None, help="comma-separated PMU bus ids")
    g.add_argument("--n-pmu", type=int, default=None, help="place this many PMUs with the SDP method")
    p.add_argument("--perturbation", type=float, default=0.1)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--dump-measurements", default=None, metavar="PATH")
    p.add_argument("--trace-dir", default=None)

    p = add("solve-sdp", help="solve an SDPA-format LMI program")
    p.add_argument("file")
    p.add_argument("--feas-tol", type=float, default=1e-7)
    p.add_argument("--gap-tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=1000)
    return parser


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(obj):
    return json.dumps(ex._jsonable(obj), indent=2, sort_keys=True)


def _emit(args, summary, text):
    if args.json:
        print(_dump(summary))
    else:
        print(text)


def _model(args, grid, mats, rng):
    inj, fl = sample_scada(grid, args.scada_fraction, rng)
    return GainModel(mats, inj, fl, Sigmas.uniform(math.sqrt(args.sigma2)))


def _bus_list(grid, pmu):
    return [grid.bus_ids[i] for i in np.flatnonzero(pmu)]


def cmd_sweep(args):
    cfg = ex.ExperimentConfig(
        case=args.case,
        scada_fraction=args.scada_fraction,
        sigma2=args.sigma2,
        beta_min=args.beta_min,
        seed=args.seed,
        methods=args.methods,
        n_samples=args.n_samples,
        exhaustive_limit=args.exhaustive_limit,
        pmu_range=args.pmu_range,
    )
    res = ex.run_cop_sweep(cfg)
    files = ex.emit_report(res, _out_dir(args))
    lines = [f"{r['n_pmu']:>3} {r['method']:<14} rho={r['rho']:.6g} beta={r['beta']:.6g} phi={r['phi']:.6g}" for r in res.rows]
    _emit(args, {"kind": "sweep", "files": [str(f) for f in files], "rows": res.rows}, "\n".join(lines + [f"wrote {', '.join(map(str, files))}"]))
    return 0


def cmd_tve(args):
    cfg = ex.ExperimentConfig(
        case=args.case,
        scada_fraction=args.scada_fraction,
        sigma2=args.sigma2,
        n_pmu=args.n_pmu,
        trials=args.trials,
        perturbation=args.perturbation,
        beta_min=args.beta_min,
        seed=args.seed,
        methods=args.methods,
        n_samples=args.n_samples,
        max_iters=args.max_iters,
        tve_threshold=args.tve_threshold,
        redraw_scada=not args.fixed_scada,
    )
    res = ex.run_tve_experiment(cfg)
    files = ex.emit_report(res, _out_dir(args), trace_dir=args.trace_dir)
    lines = [
        f"{n:<14} converged {c.n_converged}/{c.n_trials}  asymptotic TVE {c.asymptotic_tve:.4g}%  "
        f"iters to {cfg.tve_threshold:g}% {c.mean_iters_to_threshold:.3g}"
        for n, c in res.curves.items()
    ]
    summary = {"kind": "tve", "files": [str(f) for f in files], "curves": {k: c.to_dict() for k, c in res.curves.items()}}
    _emit(args, summary, "\n".join(lines))
    return 0


def _costs(args, N):
    if args.costs is None:
        return None
    vals = [float(x) for x in args.costs.split(",")]
    if len(vals) != N:
        raise ValueError(f"--costs needs {N} values, got {len(vals)}")
    return np.array(vals)


def cmd_place(args):
    grid = load_case(args.case)
    mats = build_constant_matrices(grid)
    root = np.random.SeedSequence(args.seed)
    scada_seed, round_seed = root.spawn(2)
    model = _model(args, grid, mats, np.random.default_rng(scada_seed))
    problem = PlacementProblem(model, args.n_pmu, beta_min=args.beta_min, costs=_costs(args, grid.n_buses), cost_cap=args.cost_cap)
    out = _out_dir(args)
    if args.dump_sdp:
        write_sdpa(build_sdp(problem), args.dump_sdp)
    rng = np.random.default_rng(round_seed)
    if args.method == "sdp":
        res = place_sdp(problem, n_samples=args.n_samples, seed=rng)
    elif args.method == "exhaustive":
        res = exhaustive_optimal(problem)
    elif args.method == "accuracy":
        res = baseline_accuracy(problem, n_samples=args.n_samples, seed=rng)
    else:
        res = baseline_observability(problem, seed=rng)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["bus", "pmu", "fractional", "injection", "flows"])
    frac = res.fractional if res.fractional is not None else np.full(grid.n_buses, math.nan)
    nflows = np.zeros(grid.n_buses, dtype=int)
    for k, (n, _) in enumerate(grid.directed_lines):
        nflows[n] += model.flows[k]
    for i, bus in enumerate(grid.bus_ids):
        w.writerow([bus, int(res.pmu[i]), repr(float(frac[i])), int(model.injections[i]), int(nflows[i])])
    (out / "placement.csv").write_text(buf.getvalue(), newline="")
    summary = res.to_dict()
    summary.update(case=grid.name, seed=args.seed, pmu_buses=_bus_list(grid, res.pmu))
    (out / "placement.json").write_text(_dump(summary) + "\n")
    c = res.cop
    text = f"{res.method}: PMUs at buses {summary['pmu_buses']}\n  rho={c.rho:.6g} beta={c.beta:.6g} phi={c.phi:.6g} critical_ok={c.critical_ok}"
    if not math.isnan(res.tau):
        text += f"\n  relaxation bound tau*={res.tau:.6g}"
    _emit(args, summary, text)
    return 0


def cmd_estimate(args):
    grid = load_case(args.case)
    mats = build_constant_matrices(grid)
    N = grid.n_buses
    sigmas = Sigmas.uniform(math.sqrt(args.sigma2))
    scada_s, round_s, truth_s, noise_s, prior_s = np.random.SeedSequence(args.seed).spawn(5)
    model = _model(args, grid, mats, np.random.default_rng(scada_s))
    pmu = np.zeros(N, dtype=np.int8)
    if args.pmu:
        index = {b: i for i, b in enumerate(grid.bus_ids)}
        for tok in args.pmu.split(","):
            b = int(tok)
            if b not in index:
                raise ValueError(f"unknown bus id {b}")
            pmu[index[b]] = 1
    elif args.n_pmu:
        problem = PlacementProblem(model, args.n_pmu, beta_min=args.beta_min)
        pmu = place_sdp(problem, seed=np.random.default_rng(round_s)).pmu
    placement = Placement.build(grid, pmu, model.injections, model.flows)
    v_true = random_true_state(N, np.random.default_rng(truth_s))
    z = synthesize_measurements(v_true, mats, sigmas, np.random.default_rng(noise_s))
    out = _out_dir(args)
    if args.dump_measurements:
        Path(args.dump_measurements).write_text(z.to_csv(selection_mask(placement, grid)), newline="")
    prior_rng = np.random.default_rng(prior_s)
    v_prior = np.concatenate([1.0 + args.perturbation * prior_rng.standard_normal(N), np.zeros(N)])
    v0 = pmu_initializer(z.z[: 2 * N], v_prior, pmu)
    opts = GnOptions(max_iters=args.max_iters, ridge=args.ridge)
    v, trace = gauss_newton(z, placement, v0, mats, opts, v_true=v_true, sigmas=sigmas)
    if args.trace_dir:
        td = Path(args.trace_dir)
        td.mkdir(parents=True, exist_ok=True)
        (td / "trace.csv").write_text(trace.to_csv(), newline="")
    summary = {
        "case": grid.name,
        "seed": args.seed,
        "pmu_buses": _bus_list(grid, pmu),
        "status": trace.status,
        "message": trace.message,
        "iterations": trace.n_iter,
        "tve": trace.tve.tolist(),
        "final_tve": float(tve(v, v_true)),
        "beta": trace.beta,
        "epsilon": trace.epsilon,
        "state": v.tolist(),
    }
    (out / "estimate.json").write_text(_dump(summary) + "\n")
    text = f"{trace.status} after {trace.n_iter} iterations; TVE {summary['final_tve']:.4g}% (PMUs at {summary['pmu_buses']})"
    _emit(args, summary, text)
    return 0 if trace.converged else 1


def cmd_solve_sdp(args):
    prog = read_sdpa(args.file)
    sol = solve(prog, feas_tol=args.feas_tol, gap_tol=args.gap_tol, max_iter=args.max_iter)
    summary = {
        "status": sol.status,
        "objective": sol.objective,
        "bound": sol.bound,
        "margin": sol.margin,
        "iterations": sol.iterations,
        "violated_block": sol.violated_block,
        "y": sol.y.tolist(),
    }
    out = _out_dir(args)
    (out / "sdp_solution.json").write_text(_dump(summary) + "\n")
    text = f"{sol.status}: objective {sol.objective:.10g} after {sol.iterations} Newton steps"
    if sol.violated_block is not None:
        text += f" (first violated block {sol.violated_block})"
    _emit(args, summary, text)
    return 0 if sol.status == "optimal" else 1


COMMANDS = {
    "sweep": cmd_sweep,
    "tve": cmd_tve,
    "place": cmd_place,
    "estimate": cmd_estimate,
    "solve-sdp": cmd_solve_sdp,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except (CaseParseError, GridValidationError, FileNotFoundError) as exc:
        print(f"cop-place: input error: {exc}", file=sys.stderr)
        return 2
    except PlacementInfeasibleError as exc:
        print(f"cop-place: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"cop-place: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
