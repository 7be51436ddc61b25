"""Seeded experiment harness: COP sweeps over the PMU budget and Monte-Carlo
Gauss-Newton convergence studies, with CSV/JSON/SVG reporting."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .estimator import GnOptions, gauss_newton, pmu_initializer
from .gain import GainModel
from .grid import build_constant_matrices, load_case
from .measurements import Placement, Sigmas, random_true_state, sample_scada, scada_site_count, synthesize_measurements
from .placement import (
    MAX_EXHAUSTIVE,
    PlacementInfeasibleError,
    PlacementProblem,
    baseline_accuracy,
    baseline_observability,
    exhaustive_optimal,
    place_sdp,
)

__all__ = [
    "ExperimentConfig",
    "SweepResult",
    "TveCurve",
    "TveResult",
    "run_cop_sweep",
    "run_tve_experiment",
    "emit_report",
    "worker_count",
]

logger = logging.getLogger(__name__)

SWEEP_METHODS = ("proposed", "exhaustive", "accuracy", "observability")
TVE_METHODS = ("proposed", "accuracy", "observability", "none")


@dataclass
class ExperimentConfig:
    case: str = "ieee14"
    scada_fraction: float = 0.15
    sigma2: float = 1e-4
    n_pmu: int | None = None
    trials: int = 200
    perturbation: float = 0.1
    beta_min: float = 0.01
    seed: int = 0
    methods: tuple = ()
    n_samples: int = 1000
    max_iters: int = 50
    tve_threshold: float = 0.1
    exhaustive_limit: int = MAX_EXHAUSTIVE
    redraw_scada: bool = True
    pmu_range: tuple | None = None

    def __post_init__(self):
        if not 0.0 <= self.scada_fraction <= 1.0:
            raise ValueError("scada_fraction must lie in [0, 1]")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        self.methods = tuple(self.methods)

    @property
    def sigmas(self) -> Sigmas:
        return Sigmas.uniform(math.sqrt(self.sigma2))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        d["pmu_range"] = None if self.pmu_range is None else list(self.pmu_range)
        return d


def worker_count() -> int:
    cap = os.environ.get("COP_PLACE_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            logger.warning("ignoring non-integer COP_PLACE_THREADS=%r", cap)
    return n


@lru_cache(maxsize=8)
def _case(case):
    grid = load_case(case)
    return grid, build_constant_matrices(grid)


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r[h]) for h in header])
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


# ---------------------------------------------------------------------------
# COP sweep


SWEEP_COLUMNS = ["n_pmu", "method", "beta", "phi", "rho", "tau", "feasible", "pmu_used", "pmu", "note"]


@dataclass
class SweepResult:
    config: ExperimentConfig
    rows: list
    scada: dict
    seeds: dict

    def to_csv(self) -> str:
        return _csv(SWEEP_COLUMNS, self.rows)

    def table(self, method):
        return [r for r in self.rows if r["method"] == method]

    def summary(self) -> dict:
        return {"kind": "sweep", "config": self.config.to_dict(), "scada": self.scada, "seeds": self.seeds, "rows": self.rows}


def _seed_tree(seed):
    root = np.random.SeedSequence(seed)
    scada, rounding, obs, trials = root.spawn(4)
    return {"scada": scada, "rounding": rounding, "observability": obs, "trials": trials}


def _sweep_row(k, method, res=None, note=""):
    if res is None:
        return {
            "n_pmu": k,
            "method": method,
            "beta": math.nan,
            "phi": math.nan,
            "rho": math.nan,
            "tau": math.nan,
            "feasible": False,
            "pmu_used": 0,
            "pmu": "",
            "note": note,
        }
    return {
        "n_pmu": k,
        "method": method,
        "beta": res.cop.beta,
        "phi": res.cop.phi,
        "rho": res.cop.rho,
        "tau": res.tau,
        "feasible": res.feasible,
        "pmu_used": int(res.pmu.sum()),
        "pmu": " ".join(str(i) for i in np.flatnonzero(res.pmu)),
        "note": "; ".join(res.notes) or note,
    }


def run_cop_sweep(config: ExperimentConfig) -> SweepResult:
    """Score every method at each PMU budget under one seeded SCADA draw."""
    grid, mats = _case(config.case)
    N = grid.n_buses
    seeds = _seed_tree(config.seed)
    inj, fl = sample_scada(grid, config.scada_fraction, np.random.default_rng(seeds["scada"]))
    model = GainModel(mats, inj, fl, config.sigmas)
    methods = config.methods or SWEEP_METHODS
    lo, hi = config.pmu_range or (1, N - 1)
    rows = []
    for k in range(lo, hi + 1):
        problem = PlacementProblem(model, k, beta_min=config.beta_min)
        round_seed = np.random.default_rng([config.seed, k, 1])
        for method in methods:
            try:
                if method == "proposed":
                    res = place_sdp(problem, n_samples=config.n_samples, seed=round_seed)
                elif method == "exhaustive":
                    if math.comb(N, k) > config.exhaustive_limit:
                        rows.append(_sweep_row(k, method, note="skipped: candidate count above limit"))
                        continue
                    res = exhaustive_optimal(problem)
                elif method == "accuracy":
                    res = baseline_accuracy(problem, n_samples=config.n_samples, seed=np.random.default_rng([config.seed, k, 2]))
                elif method == "observability":
                    res = baseline_observability(problem, seed=np.random.default_rng([config.seed, k, 3]))
                else:
                    raise ValueError(f"unknown method {method!r}")
            except PlacementInfeasibleError as exc:
                rows.append(_sweep_row(k, method, note=f"infeasible: {exc.pattern}"))
                continue
            rows.append(_sweep_row(k, method, res))
            logger.info("sweep k=%d %s rho=%.4g beta=%.4g", k, method, res.cop.rho, res.cop.beta)
    scada = scada_site_count(grid, config.scada_fraction)
    scada.update(injections=np.flatnonzero(inj).tolist(), flows=np.flatnonzero(fl).tolist())
    seed_info = {"root": config.seed, "rounding": "rng([seed, k, 1])", "accuracy": "rng([seed, k, 2])", "observability": "rng([seed, k, 3])"}
    return SweepResult(config=config, rows=rows, scada=scada, seeds=seed_info)


# ---------------------------------------------------------------------------
# TVE study


@dataclass
class TveCurve:
    method: str
    mean_tve: np.ndarray
    initial_tve: float
    divergence_fraction: float
    asymptotic_tve: float
    mean_iters_to_threshold: float
    reached_threshold: int
    n_converged: int
    n_trials: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean_tve"] = self.mean_tve.tolist()
        return d


@dataclass
class TveResult:
    config: ExperimentConfig
    curves: dict
    trials: list = field(repr=False, default_factory=list)

    def to_csv(self) -> str:
        rows = []
        for name, c in self.curves.items():
            for k, val in enumerate(c.mean_tve, start=1):
                rows.append({"method": name, "iter": k, "mean_tve": val})
        return _csv(["method", "iter", "mean_tve"], rows)

    def summary_csv(self) -> str:
        header = [
            "method",
            "n_trials",
            "n_converged",
            "divergence_fraction",
            "asymptotic_tve",
            "mean_iters_to_threshold",
            "reached_threshold",
        ]
        return _csv(header, [{h: getattr(c, h) if h != "method" else n for h in header} for n, c in self.curves.items()])

    def summary(self) -> dict:
        return {
            "kind": "tve",
            "config": self.config.to_dict(),
            "curves": {k: c.to_dict() for k, c in self.curves.items()},
            "trials": [{k: v for k, v in t.items() if k != "traces"} for t in self.trials],
        }


def _placements(model, config, k, rng):
    problem = PlacementProblem(model, k, beta_min=config.beta_min)
    out = {}
    for method in config.methods or TVE_METHODS:
        if method == "none":
            out[method] = np.zeros(model.grid.n_buses, dtype=np.int8)
            continue
        try:
            if method == "proposed":
                res = place_sdp(problem, n_samples=config.n_samples, seed=rng)
            elif method == "accuracy":
                res = baseline_accuracy(problem, n_samples=config.n_samples, seed=rng)
            elif method == "observability":
                res = baseline_observability(problem, seed=rng)
            elif method == "exhaustive":
                res = exhaustive_optimal(problem)
            else:
                raise ValueError(f"unknown method {method!r}")
            out[method] = res.pmu
        except PlacementInfeasibleError as exc:
            logger.warning("%s placement infeasible: %s", method, exc)
            out[method] = None
    return out


def _run_trial(args):
    config, index, seed_seq, fixed = args
    grid, mats = _case(config.case)
    N = grid.n_buses
    k = config.n_pmu if config.n_pmu is not None else max(1, round(0.17 * N))
    scada_rng, truth_rng, noise_rng, prior_rng, place_rng = (np.random.default_rng(s) for s in seed_seq.spawn(5))
    if fixed is None:
        inj, fl = sample_scada(grid, config.scada_fraction, scada_rng)
        model = GainModel(mats, inj, fl, config.sigmas)
        placements = _placements(model, config, k, place_rng)
    else:
        inj, fl, placements = fixed
    v_true = random_true_state(N, truth_rng)
    z = synthesize_measurements(v_true, mats, config.sigmas, noise_rng)
    v_prior = np.concatenate([1.0 + config.perturbation * prior_rng.standard_normal(N), np.zeros(N)])
    opts = GnOptions(max_iters=config.max_iters)
    out = {"trial": index, "methods": {}, "traces": {}}
    for method, pmu in placements.items():
        if pmu is None:
            out["methods"][method] = {"status": "no-placement", "tve": [], "pmu": None}
            continue
        placement = Placement.build(grid, pmu, inj, fl)
        v0 = pmu_initializer(z.z[: 2 * N], v_prior, pmu)
        _, trace = gauss_newton(z, placement, v0, mats, opts, v_true=v_true, sigmas=config.sigmas, instrument=False)
        out["methods"][method] = {
            "status": trace.status,
            "tve": [float(x) for x in trace.tve],
            "pmu": [int(i) for i in np.flatnonzero(pmu)],
            "n_iter": trace.n_iter,
        }
        out["traces"][method] = trace.to_csv()
    return out


def _aggregate(method, trials, config):
    T = config.max_iters
    curves, finals, hits = [], [], []
    initial = []
    n = 0
    for t in trials:
        m = t["methods"].get(method)
        if m is None:
            continue
        n += 1
        if m["status"] != "converged":
            continue
        tv = np.asarray(m["tve"])
        initial.append(tv[0])
        padded = np.full(T, tv[-1])
        padded[: len(tv) - 1] = tv[1:T + 1]
        curves.append(padded)
        finals.append(tv[-1])
        below = np.flatnonzero(tv < config.tve_threshold)
        if below.size:
            hits.append(int(below[0]))
    n_conv = len(curves)
    return TveCurve(
        method=method,
        mean_tve=np.mean(curves, axis=0) if curves else np.full(T, math.nan),
        initial_tve=float(np.mean(initial)) if initial else math.nan,
        divergence_fraction=(n - n_conv) / n if n else math.nan,
        asymptotic_tve=float(np.mean(finals)) if finals else math.nan,
        mean_iters_to_threshold=float(np.mean(hits)) if hits else math.inf,
        reached_threshold=len(hits),
        n_converged=n_conv,
        n_trials=n,
    )


def run_tve_experiment(config: ExperimentConfig, workers=None) -> TveResult:
    """Monte-Carlo Gauss-Newton runs per placement method.

    Each trial redraws the SCADA subset (unless ``redraw_scada`` is off),
    recomputes every placement, synthesises noisy measurements from a random
    true state and starts from a perturbed flat prior.  Non-converged trials
    are left out of the mean curves and counted in the divergence fraction.
    """
    seeds = _seed_tree(config.seed)
    children = seeds["trials"].spawn(config.trials)
    fixed = None
    if not config.redraw_scada:
        grid, mats = _case(config.case)
        k = config.n_pmu if config.n_pmu is not None else max(1, round(0.17 * grid.n_buses))
        inj, fl = sample_scada(grid, config.scada_fraction, np.random.default_rng(seeds["scada"]))
        model = GainModel(mats, inj, fl, config.sigmas)
        fixed = (inj, fl, _placements(model, config, k, np.random.default_rng(seeds["rounding"])))
    jobs = [(config, i, children[i], fixed) for i in range(config.trials)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and config.trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial, jobs))
    else:
        results = [_run_trial(j) for j in jobs]
    results.sort(key=lambda r: r["trial"])
    methods = config.methods or TVE_METHODS
    curves = {m: _aggregate(m, results, config) for m in methods}
    return TveResult(config=config, curves=curves, trials=results)


# ---------------------------------------------------------------------------
# reporting


def _plot_sweep(result: SweepResult, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "cop-place"
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.8))
    methods = list(dict.fromkeys(r["method"] for r in result.rows))
    for ax, key in zip(axes, ("rho", "beta", "phi")):
        for m in methods:
            rows = [r for r in result.rows if r["method"] == m and np.isfinite(r[key]) and r[key] > 0]
            if rows:
                ax.plot([r["n_pmu"] for r in rows], [r[key] for r in rows], marker="o", ms=3, label=m)
        ax.set_xlabel("PMU budget")
        ax.set_ylabel(key)
        ax.set_yscale("log")
        ax.grid(True, alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _plot_tve(result: TveResult, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "cop-place"
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, c in result.curves.items():
        if c.n_converged:
            ks = np.arange(0, len(c.mean_tve) + 1)
            ax.plot(ks, np.concatenate([[c.initial_tve], c.mean_tve]), marker=".", label=f"{name} ({c.divergence_fraction:.0%} div.)")
    ax.set_xlabel("iteration")
    ax.set_ylabel("TVE (%)")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_report(result, out_dir, trace_dir=None) -> list:
    """Write CSV, SVG and ``summary.json`` for a sweep or TVE result."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    if isinstance(result, SweepResult):
        (out / "sweep.csv").write_text(result.to_csv(), newline="")
        _plot_sweep(result, out / "sweep.svg")
        written += [out / "sweep.csv", out / "sweep.svg"]
    elif isinstance(result, TveResult):
        (out / "tve.csv").write_text(result.to_csv(), newline="")
        (out / "tve_summary.csv").write_text(result.summary_csv(), newline="")
        _plot_tve(result, out / "tve.svg")
        written += [out / "tve.csv", out / "tve_summary.csv", out / "tve.svg"]
        if trace_dir is not None:
            td = Path(trace_dir)
            td.mkdir(parents=True, exist_ok=True)
            for t in result.trials:
                for method, text in t["traces"].items():
                    p = td / f"trial{t['trial']:04d}_{method}.csv"
                    p.write_text(text, newline="")
    else:
        raise TypeError(f"cannot report {type(result).__name__}")
    (out / "summary.json").write_text(json.dumps(_jsonable(result.summary()), indent=2, sort_keys=True) + "\n")
    written.append(out / "summary.json")
    return written
