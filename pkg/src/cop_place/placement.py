"""PMU placement: the Charnes-Cooper SDP, randomized rounding, exhaustive
search and the two baseline schemes.

Decision variables of the COP program are ``(xi, tau, gamma)`` with
``xi = gamma * pmu``; maximising ``tau`` subject to

    P(xi) + gamma S_prior - tau I                  >= 0
    [[I, M^1/2 (gamma I - J_xi)], [., gamma I]]    >= 0
    P(xi) + gamma S_pattern - gamma beta_min I     >= 0   (every pattern)
    0 <= xi <= gamma,  1^T xi <= k gamma,  c^T xi <= C gamma

gives ``tau* = max beta/phi`` over fractional PMU vectors.  Internally the
gain terms are divided by ``beta`` of the full-coverage placement and ``M`` by
its largest eigenvalue so the program is O(1); ``meta["rho_scale"]`` maps the
scaled objective back.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .gain import CopReport, GainModel
from .linalg import EIG_RTOL
from .sdp import LmiBlock, LmiProgram, LowRank, SdpSolution, solve

__all__ = [
    "PlacementProblem",
    "PlacementResult",
    "PlacementInfeasibleError",
    "build_sdp",
    "solve_placement_sdp",
    "recover_fractional",
    "randomized_round",
    "exhaustive_optimal",
    "place_sdp",
    "baseline_accuracy",
    "baseline_observability",
    "MAX_EXHAUSTIVE",
    "PmuPlacement",
]

logger = logging.getLogger(__name__)

MAX_EXHAUSTIVE = 10_000_000
_BATCH = 2048


class PlacementInfeasibleError(RuntimeError):
    """No placement within budget clears ``beta_min`` on every failure pattern."""

    def __init__(self, message, pattern=None):
        super().__init__(message)
        self.pattern = pattern


@dataclass(eq=False)
class PlacementProblem:
    model: GainModel
    n_pmu: int
    beta_min: float = 0.01
    costs: np.ndarray = None
    cost_cap: float = None

    def __post_init__(self):
        N = self.n_buses
        if not 0 <= self.n_pmu <= N:
            raise ValueError(f"n_pmu must lie in [0, {N}]")
        if not self.beta_min > 0:
            raise ValueError("beta_min must be positive")
        self.costs = np.ones(N) if self.costs is None else np.asarray(self.costs, dtype=float)
        if self.costs.shape != (N,) or np.any(self.costs < 0):
            raise ValueError("costs must be a non-negative vector of length N")
        if self.cost_cap is None:
            self.cost_cap = float(self.n_pmu)

    @property
    def n_buses(self) -> int:
        return self.model.grid.n_buses

    @property
    def cost_binding(self) -> bool:
        """Can the cost cap exclude some placement with ``n_pmu`` PMUs?"""
        top = np.sort(self.costs)[::-1][: self.n_pmu].sum()
        return top > self.cost_cap + 1e-12

    def admissible(self, pmu) -> np.ndarray:
        pmu = np.asarray(pmu, dtype=float)
        return (pmu.sum(axis=-1) <= self.n_pmu + 1e-9) & (pmu @ self.costs <= self.cost_cap + 1e-9)


@dataclass(eq=False)
class PlacementResult:
    pmu: np.ndarray
    cop: CopReport
    method: str
    fractional: np.ndarray = None
    n_samples: int = 0
    tau: float = math.nan
    sdp_status: str = ""
    elapsed: float = 0.0
    notes: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.cop.feasible

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "pmu": [int(x) for x in self.pmu],
            "n_pmu": int(self.pmu.sum()),
            "fractional": None if self.fractional is None else [float(x) for x in self.fractional],
            "n_samples": self.n_samples,
            "tau": _json_float(self.tau),
            "sdp_status": self.sdp_status,
            "elapsed": self.elapsed,
            "notes": list(self.notes),
        }
        out.update({k: _json_float(v) if isinstance(v, float) else v for k, v in self.cop.to_dict().items()})
        return out


def _json_float(x):
    if x is None or isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


# ---------------------------------------------------------------------------
# program assembly


def _scales(model: GainModel):
    beta_full = float(model.beta(np.ones(model.grid.n_buses)))
    if beta_full <= 0:
        raise PlacementInfeasibleError("grid is unobservable even with a PMU on every bus")
    return beta_full, max(model.lambda_max_M, 0.0)


def _m_support(model: GainModel):
    N = model.grid.n_buses
    diag = np.diag(model.M)
    tol = EIG_RTOL * max(model.lambda_max_M, 0.0)
    return (diag[:N] > tol) | (diag[N:] > tol)


def build_sdp(problem: PlacementProblem, objective="cop", fixed=None, patterns=None) -> LmiProgram:
    """Assemble the placement program.

    ``objective="cop"`` builds the Charnes-Cooper program over
    ``(xi, tau, gamma)``; ``"beta"`` drops the Schur block, pins ``gamma = 1``
    and maximises ``lambda_min`` over ``(pmu, tau)``.  ``fixed`` marks buses
    forced to host a PMU (``"beta"`` form only); ``patterns`` restricts the
    failure blocks to a subset.
    """
    model = problem.model
    N = problem.n_buses
    d = model.dim
    sb, sm = _scales(model)
    patterns = model.patterns if patterns is None else patterns
    fixed = np.zeros(N, dtype=bool) if fixed is None else np.asarray(fixed, dtype=bool)
    if fixed.any() and objective != "beta":
        raise ValueError("fixed buses are only supported for the beta objective")
    free = np.flatnonzero(~fixed)
    budget = problem.n_pmu - int(fixed.sum())
    cap = problem.cost_cap - float(problem.costs[fixed].sum())
    if budget < 1 or cap <= 1e-12:
        # nothing left to place; the budget rows would have no interior
        free = free[:0]
    nf = free.size
    factors = [model.pmu_factors[n] / math.sqrt(sb) for n in range(N)]
    P_lr = {j: LowRank(factors[n], np.ones(factors[n].shape[1])) for j, n in enumerate(free)}
    S_prior = model.S_prior / sb
    bmin = problem.beta_min / sb
    eye = np.eye(d)
    blocks = []
    if objective == "cop":
        tau, gam = nf, nf + 1
        p = nf + 2
        blocks.append(LmiBlock(np.zeros((d, d)), {**P_lr, tau: -eye, gam: S_prior}, name="gain"))
        if sm > 0:
            R = model.M_sqrt / math.sqrt(sm)
            Z = np.zeros((d, d))
            const = np.block([[eye, Z], [Z, Z]])
            coeffs = {gam: np.block([[Z, R], [R, eye]])}
            for j, n in enumerate(free):
                e = np.zeros((d, 2))
                e[n, 0] = e[N + n, 1] = 1.0
                a = np.vstack([R @ e, np.zeros((d, 2))])
                b = np.vstack([np.zeros((d, 2)), e])
                coeffs[j] = LowRank.from_pair(-a, b)
            blocks.append(LmiBlock(const, coeffs, name="schur"))
        for pat in patterns:
            Sp = model.S_pattern(pat) / sb - bmin * eye
            blocks.append(LmiBlock(np.zeros((d, d)), {**P_lr, gam: Sp}, name=f"{pat.kind}:{pat.index}"))
        G = np.zeros((nf + 2, p))
        h = np.zeros(nf + 2)
        G[:nf, :nf] = np.eye(nf)
        G[:nf, gam] = -1.0
        G[nf, :nf] = 1.0
        G[nf, gam] = -problem.n_pmu
        G[nf + 1, :nf] = problem.costs[free]
        G[nf + 1, gam] = -problem.cost_cap
        if nf == 0:
            G, h = G[:0], h[:0]
        lower = np.full(p, -np.inf)
        upper = np.full(p, np.inf)
        lower[:nf] = 0.0
        lower[gam] = 0.0
        # safeguard only; binds when phi can be driven to 0
        upper[gam] = 1e8
        c = np.zeros(p)
        c[tau] = 1.0
        names = tuple(f"xi{n}" for n in free) + ("tau", "gamma")
    elif objective == "beta":
        tau = nf
        p = nf + 1
        base = model.P(fixed.astype(float)) / sb
        blocks.append(LmiBlock(base + S_prior, {**P_lr, tau: -eye}, name="gain"))
        for pat in patterns:
            Sp = base + model.S_pattern(pat) / sb - bmin * eye
            blocks.append(LmiBlock(Sp, dict(P_lr), name=f"{pat.kind}:{pat.index}"))
        G = np.zeros((2, p))
        G[0, :nf] = 1.0
        G[1, :nf] = problem.costs[free]
        h = np.array([budget, cap], dtype=float)
        if nf == 0:
            G, h = G[:0], h[:0]
        lower = np.full(p, -np.inf)
        upper = np.full(p, np.inf)
        lower[:nf] = 0.0
        upper[:nf] = 1.0
        c = np.zeros(p)
        c[tau] = 1.0
        names = tuple(f"pmu{n}" for n in free) + ("tau",)
    else:
        raise ValueError(f"unknown objective {objective!r}")
    meta = {
        "objective": objective,
        "n_buses": N,
        "free": free,
        "fixed": fixed,
        "beta_scale": sb,
        "phi_scale": sm,
        "rho_scale": sb / sm if sm > 0 else math.inf,
        "n_patterns": len(patterns),
    }
    return LmiProgram(objective=c, blocks=blocks, G=G, h=h, lower=lower, upper=upper, var_names=names, meta=meta)


def _start_point(problem, prog):
    """Interior-ish starting point: uniform fractional placement."""
    meta = prog.meta
    free = meta["free"]
    nf = free.size
    budget = problem.n_pmu - int(meta["fixed"].sum())
    share = 0.0 if nf == 0 else min(0.9, 0.9 * budget / nf)
    if nf and problem.costs[free].sum() > 0:
        share = min(share, 0.9 * (problem.cost_cap - problem.costs[meta["fixed"]].sum()) / problem.costs[free].sum())
    share = max(share, 1e-3)
    model = problem.model
    pmu = np.zeros(problem.n_buses)
    pmu[meta["fixed"]] = 1.0
    pmu[free] = share
    beta = float(model.beta(pmu)) / meta["beta_scale"]
    y = np.zeros(prog.n_vars)
    if meta["objective"] == "cop":
        phi = float(model.phi(pmu)) / meta["phi_scale"] if meta["phi_scale"] > 0 else 0.0
        gam = 0.5 / max(phi, 1e-6)
        y[:nf] = share * gam
        y[nf] = 0.5 * gam * beta - 1.0
        y[nf + 1] = gam
    else:
        y[:nf] = share
        y[nf] = 0.5 * beta - 1.0
    return y


def recover_fractional(sol: SdpSolution, prog: LmiProgram, feas_tol=1e-7) -> np.ndarray:
    """``pmu* = xi* / gamma*`` (or the ``pmu`` block directly for ``"beta"``)."""
    meta = prog.meta
    N = meta["n_buses"]
    free = meta["free"]
    out = np.zeros(N)
    out[meta["fixed"]] = 1.0
    if meta["objective"] == "cop":
        gam = sol.y[free.size + 1]
        if gam <= feas_tol:
            raise ValueError(f"degenerate SDP solution: gamma*={gam:.3e}")
        vals = sol.y[: free.size] / gam
    else:
        vals = sol.y[: free.size]
    if np.any(vals < -1e-6) or np.any(vals > 1 + 1e-6):
        logger.warning("fractional placement outside [0,1] by more than 1e-6; clamping")
    out[free] = np.clip(vals, 0.0, 1.0)
    return out


def _active_violations(model, pmu, patterns, beta_min):
    base = model.P(pmu)
    viol = []
    for pat in patterns:
        lam = np.linalg.eigvalsh(base + model.S_pattern(pat))[0]
        if lam < beta_min * (1 - 1e-6):
            viol.append((lam, pat))
    viol.sort(key=lambda t: t[0])
    return [p for _, p in viol]


def _warm_start(prog, previous):
    """Deepest usable point of the previous central path, as ``(y, t)``.

    Points early on the path sit far inside the old feasible set, so they
    usually clear the newly added failure blocks as well; restarting there
    skips the long first centering.
    """
    if previous is None:
        return None
    for t, y in reversed(previous.path):
        if prog.feasibility_margin(y) > 0:
            return y, t
    return None


def solve_placement_sdp(problem: PlacementProblem, objective="cop", lazy=None, sdp_opts=None):
    """Solve the placement program; returns ``(fractional, tau, solution, program)``.

    ``tau`` is in unscaled units (``rho`` for ``"cop"``, ``beta`` for
    ``"beta"``).  With ``lazy`` the failure blocks are added by constraint
    generation, which gives the same optimum with far fewer blocks on large
    grids.  When every bus that touches ``M`` fits in the budget, ``phi = 0``
    is attainable; the COP optimum is then infinite and the program falls back
    to maximising ``beta`` with those buses pinned.
    """
    model = problem.model
    opts = {"max_iter": 1000, "rel_gap": True} if sdp_opts is None else dict(sdp_opts)
    fixed = None
    if objective == "cop":
        support = _m_support(model)
        if support.sum() <= problem.n_pmu and problem.costs[support].sum() <= problem.cost_cap + 1e-12:
            objective = "beta"
            fixed = support
    if lazy is None:
        lazy = True
    active = [] if lazy else list(model.patterns)
    sol = None
    while True:
        prog = build_sdp(problem, objective=objective, fixed=fixed, patterns=active)
        y0, t0 = _warm_start(prog, sol), None
        if y0 is None:
            y0 = _start_point(problem, prog)
        else:
            y0, t0 = y0
        sol = solve(prog, y0=y0, **({**opts, "t0": t0} if t0 else opts))
        if sol.status == "infeasible":
            blk = sol.violated_block
            name = prog.blocks[blk].name if blk is not None else "linear constraints"
            raise PlacementInfeasibleError(f"placement program infeasible (binding block: {name})", name)
        frac = recover_fractional(sol, prog)
        if not lazy:
            break
        missing = [p for p in _active_violations(model, frac, model.patterns, problem.beta_min) if p not in active]
        if not missing:
            break
        active.extend(missing)
        logger.debug("lazy failure blocks: %d active", len(active))
    if prog.meta["objective"] == "cop" and fixed is None:
        tau = sol.objective * prog.meta["rho_scale"]
    elif fixed is not None:
        tau = math.inf
    else:
        tau = sol.objective * prog.meta["beta_scale"]
    return frac, tau, sol, prog


# ---------------------------------------------------------------------------
# discrete search


def _batch(model):
    # bound each stacked eigenproblem batch to about 128 MB
    return max(1, min(_BATCH, 2**24 // model.dim**2))


def _rank(problem, cands, key):
    """Order candidate rows best-first; stable, so earlier rows win ties."""
    model = problem.model
    step = _batch(model)
    beta = np.concatenate([model.beta(cands[i : i + step]) for i in range(0, len(cands), step)])
    phi = np.concatenate([model.phi(cands[i : i + step]) for i in range(0, len(cands), step)])
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(phi > 0, beta / np.where(phi > 0, phi, 1.0), np.where(beta > 0, np.inf, 0.0))
    if key == "cop":
        order = np.lexsort((-beta, -rho))
    else:
        order = np.lexsort((-rho, -beta))
    return order, beta, phi, rho


def _first_feasible(problem, cands, order, beta):
    model = problem.model
    for i in order:
        if beta[i] <= 0:
            return None
        if model.passes(cands[i], problem.beta_min):
            return i
    return None


def _lex_key(pmu):
    return tuple(np.flatnonzero(pmu))


def _unique_rows(rows):
    """Distinct rows ordered by their sorted bus-index tuples."""
    seen = {}
    for r in rows:
        seen.setdefault(_lex_key(r), r)
    return np.array([seen[k] for k in sorted(seen)], dtype=np.int8).reshape(-1, rows.shape[1])


def randomized_round(fractional, problem: PlacementProblem, n_samples=1000, seed=None, key="cop") -> PlacementResult:
    """Best feasible Bernoulli sample of ``fractional`` (greedy repair if none)."""
    t0 = time.perf_counter()
    frac = np.clip(np.asarray(fractional, dtype=float), 0.0, 1.0)
    rng = np.random.default_rng(seed)
    draws = (rng.random((n_samples, frac.size)) < frac).astype(np.int8)
    cands = _unique_rows(draws)
    cands = cands[problem.admissible(cands)]
    notes = []
    best = None
    if len(cands):
        order, beta, _, _ = _rank(problem, cands, key)
        i = _first_feasible(problem, cands, order, beta)
        if i is not None:
            best = cands[i]
    if best is None:
        best = _greedy_repair(frac, problem, key)
        notes.append("no feasible sample; greedy repair")
        model = problem.model
        if not (model.beta(best) > 0 and model.passes(best, problem.beta_min)):
            # nothing feasible found: keep the best-ranked candidate seen
            pool = np.vstack([cands, best[None, :]]) if len(cands) else best[None, :]
            order, _, _, _ = _rank(problem, pool, key)
            best = _improve(pool[order[0]], problem, key, feasible=False)
            notes.append("no candidate satisfies every failure pattern")
    cop = problem.model.report(best, problem.beta_min)
    return PlacementResult(
        pmu=best.astype(np.int8),
        cop=cop,
        method="sdp+rounding",
        fractional=frac,
        n_samples=n_samples,
        elapsed=time.perf_counter() - t0,
        notes=notes,
    )


def _deficient_basis(G, floor):
    w, V = np.linalg.eigh(G)
    return V[:, w < floor]


def _robust_start(frac, problem):
    """Greedy start for the repair search.

    While the prior gain or some failure-pattern gain is deficient, add the
    admissible bus whose PMU term lifts the most deficient directions across
    all of them (ties to the larger fractional value, then the lower index);
    the remaining budget goes to the largest fractional values.
    """
    model = problem.model
    N = frac.size
    pmu = np.zeros(N, dtype=np.int8)
    pref = np.lexsort((np.arange(N), -frac))
    rank_of = np.empty(N, dtype=int)
    rank_of[pref] = np.arange(N)
    while True:
        base = model.P(pmu)
        G0 = base + model.S_prior
        lam_max = float(np.linalg.eigvalsh(G0)[-1])
        bases = []
        if model.beta(pmu) <= 0:
            bases.append((_deficient_basis(G0, EIG_RTOL * lam_max), EIG_RTOL * lam_max))
        for pat, ok in zip(model.patterns, model.critical(pmu, problem.beta_min)):
            if not ok:
                bases.append((_deficient_basis(base + model.S_pattern(pat), problem.beta_min), problem.beta_min))
        if not bases:
            break
        options = [n for n in range(N) if not pmu[n] and problem.admissible(_with(pmu, n))]
        if not options:
            break
        score = np.zeros(len(options))
        for Z, floor in bases:
            if Z.shape[1] == 0:
                continue
            for i, n in enumerate(options):
                score[i] += np.count_nonzero(np.linalg.eigvalsh(Z.T @ model.P_terms[n] @ Z) >= floor)
        if score.max() <= 0:
            break
        best = max(range(len(options)), key=lambda i: (score[i], -rank_of[options[i]]))
        pmu[options[best]] = 1
    for n in pref:
        trial = _with(pmu, n)
        if not pmu[n] and problem.admissible(trial):
            pmu = trial
    return pmu


def _greedy_repair(frac, problem, key):
    """Deterministic fallback when no rounding sample is feasible.

    Builds a start with :func:`_robust_start`, then runs a single-move local
    search: among the one-swap and one-addition neighbours that clear every
    failure pattern, the best-ranked is returned; when none does, the search
    moves to the neighbour clearing the most of the currently failing
    patterns.
    """
    model = problem.model
    N = frac.size
    pmu = _robust_start(frac, problem)
    if model.beta(pmu) > 0 and model.passes(pmu, problem.beta_min):
        return _improve(pmu, problem, key)
    seen = {_lex_key(pmu)}
    for _ in range(N):
        cands = _neighbours(pmu, problem)
        cands = cands[[_lex_key(c) not in seen for c in cands]] if len(cands) else cands
        if not len(cands):
            break
        ok = np.array([model.passes(c, problem.beta_min) for c in cands], dtype=bool)
        if ok.any():
            good = cands[ok]
            order, beta, _, _ = _rank(problem, good, key)
            if beta[order[0]] > 0:
                return _improve(good[order[0]], problem, key)
        failing = [p for p, c in zip(model.patterns, model.critical(pmu, problem.beta_min)) if not c]
        if not failing:
            break
        fixed = model.critical(cands, problem.beta_min, failing).sum(axis=-1)
        top = np.flatnonzero(fixed == fixed.max())
        order, beta, _, _ = _rank(problem, cands[top], key)
        pmu = cands[top[order[0]]]
        seen.add(_lex_key(pmu))
    return pmu


def _key_of(problem, pmu, key):
    m = problem.model
    beta, rho = float(m.beta(pmu)), float(m.rho(pmu))
    return (rho, beta) if key == "cop" else (beta, rho)


def _improve(pmu, problem, key, feasible=True):
    """Hill-climb over single-move neighbours until no gain.

    With ``feasible`` set only neighbours clearing every failure pattern are
    accepted.
    """
    model = problem.model
    current = _key_of(problem, pmu, key)
    for _ in range(problem.n_buses):
        cands = _neighbours(pmu, problem)
        if not len(cands):
            break
        order, beta, _, rho = _rank(problem, cands, key)
        step = None
        for i in order:
            cand_key = (rho[i], beta[i]) if key == "cop" else (beta[i], rho[i])
            if cand_key <= current:
                break
            if not feasible or model.passes(cands[i], problem.beta_min):
                step = i
                break
        if step is None:
            break
        pmu = cands[step]
        current = _key_of(problem, pmu, key)
    return pmu


def _neighbours(pmu, problem):
    """Admissible placements one swap or one addition away, in index order."""
    on = np.flatnonzero(pmu)
    off = np.flatnonzero(pmu == 0)
    rows = []
    for m in off:
        rows.append(_with(pmu, m))
        for n in on:
            r = _with(pmu, m)
            r[n] = 0
            rows.append(r)
    if not rows:
        return np.zeros((0, pmu.size), dtype=np.int8)
    rows = _unique_rows(np.array(rows, dtype=np.int8))
    return rows[problem.admissible(rows)]


def _combinations(problem):
    N, k = problem.n_buses, problem.n_pmu
    if problem.cost_binding:
        sizes = range(0, k + 1)
    else:
        # rho, beta and the pattern checks only improve with more PMUs
        sizes = [k]
    total = sum(math.comb(N, s) for s in sizes)
    if total > MAX_EXHAUSTIVE:
        raise OverflowError(f"exhaustive search needs {total} candidates (limit {MAX_EXHAUSTIVE})")
    return sizes, total


def exhaustive_optimal(problem: PlacementProblem, key="cop") -> PlacementResult:
    """Enumerate every admissible binary placement and return the best.

    Ties are resolved in favour of the lexicographically smallest tuple of PMU
    bus indices.
    """
    t0 = time.perf_counter()
    N = problem.n_buses
    sizes, total = _combinations(problem)
    cands = []
    for s in sizes:
        for combo in itertools.combinations(range(N), s):
            row = np.zeros(N, dtype=np.int8)
            row[list(combo)] = 1
            cands.append(row)
    cands = np.array(cands, dtype=np.int8).reshape(-1, N)
    if len(sizes) > 1:
        cands = _unique_rows(cands)
    cands = cands[problem.admissible(cands)]
    order, beta, _, _ = _rank(problem, cands, key)
    i = _first_feasible(problem, cands, order, beta)
    notes = []
    if i is None:
        best = cands[order[0]] if len(cands) else np.zeros(N, dtype=np.int8)
        notes.append("no candidate satisfies every failure pattern")
    else:
        best = cands[i]
    cop = problem.model.report(best, problem.beta_min)
    return PlacementResult(
        pmu=best.astype(np.int8),
        cop=cop,
        method="exhaustive",
        n_samples=total,
        elapsed=time.perf_counter() - t0,
        notes=notes,
    )


def place_sdp(problem: PlacementProblem, n_samples=1000, seed=None, lazy=None, sdp_opts=None) -> PlacementResult:
    """SDP relaxation followed by randomized rounding."""
    t0 = time.perf_counter()
    frac, tau, sol, _ = solve_placement_sdp(problem, "cop", lazy=lazy, sdp_opts=sdp_opts)
    res = randomized_round(frac, problem, n_samples=n_samples, seed=seed, key="cop")
    res.tau = tau
    res.sdp_status = sol.status
    res.elapsed = time.perf_counter() - t0
    return res


def baseline_accuracy(problem: PlacementProblem, n_samples=1000, seed=None, lazy=None, sdp_opts=None) -> PlacementResult:
    """E-optimal placement: maximise ``beta`` with the same constraints."""
    t0 = time.perf_counter()
    frac, tau, sol, _ = solve_placement_sdp(problem, "beta", lazy=lazy, sdp_opts=sdp_opts)
    res = randomized_round(frac, problem, n_samples=n_samples, seed=seed, key="beta")
    res.method = "accuracy"
    res.tau = tau
    res.sdp_status = sol.status
    res.elapsed = time.perf_counter() - t0
    return res


def _scada_covered(model):
    grid = model.grid
    covered = model.injections.astype(bool).copy()
    for k, (n, _) in enumerate(grid.directed_lines):
        if model.flows[k]:
            covered[n] = True
    return covered


def baseline_observability(problem: PlacementProblem, seed=None) -> PlacementResult:
    """Greedy topological cover until the gain at the prior is nonsingular.

    A bus is covered when it hosts or neighbours a PMU, or is the metering end
    of a SCADA injection or flow.  Each step adds the PMU covering the most uncovered
    buses; ties are broken at random under ``seed``.
    """
    t0 = time.perf_counter()
    model = problem.model
    grid = model.grid
    N = grid.n_buses
    rng = np.random.default_rng(seed)
    covered = _scada_covered(model)
    pmu = np.zeros(N, dtype=np.int8)
    while model.beta(pmu) <= 0:
        options = [n for n in range(N) if not pmu[n] and problem.admissible(_with(pmu, n))]
        if not options:
            break
        gains = np.array([(~covered[[n, *grid.neighbors[n]]]).sum() for n in options])
        ties = [n for n, g in zip(options, gains) if g == gains.max()]
        n = ties[int(rng.integers(len(ties)))]
        pmu[n] = 1
        covered[[n, *grid.neighbors[n]]] = True
    cop = model.report(pmu, problem.beta_min)
    notes = [] if cop.beta > 0 else ["budget insufficient for observability"]
    return PlacementResult(pmu=pmu, cop=cop, method="observability", elapsed=time.perf_counter() - t0, notes=notes)


def _with(pmu, n):
    out = pmu.copy()
    out[n] = 1
    return out


class PmuPlacement(BaseEstimator):
    """Estimator-style front end to the placement methods.

    ``fit(model)`` takes a :class:`GainModel` (grid, SCADA masks and noise
    model) and stores ``placement_``, ``cop_`` and ``result_``; ``score``
    returns ``rho`` of the fitted placement, or of another PMU vector.
    """

    _methods = ("sdp", "exhaustive", "accuracy", "observability")

    def __init__(self, n_pmu=1, method="sdp", beta_min=0.01, n_samples=1000, costs=None, cost_cap=None, random_state=None):
        self.n_pmu = n_pmu
        self.method = method
        self.beta_min = beta_min
        self.n_samples = n_samples
        self.costs = costs
        self.cost_cap = cost_cap
        self.random_state = random_state

    def fit(self, model: GainModel, y=None):
        if self.method not in self._methods:
            raise ValueError(f"method must be one of {self._methods}, got {self.method!r}")
        if not isinstance(model, GainModel):
            raise TypeError("fit expects a GainModel")
        problem = PlacementProblem(model, self.n_pmu, self.beta_min, self.costs, self.cost_cap)
        if self.method == "sdp":
            res = place_sdp(problem, n_samples=self.n_samples, seed=self.random_state)
        elif self.method == "exhaustive":
            res = exhaustive_optimal(problem)
        elif self.method == "accuracy":
            res = baseline_accuracy(problem, n_samples=self.n_samples, seed=self.random_state)
        else:
            res = baseline_observability(problem, seed=self.random_state)
        self.model_ = model
        self.problem_ = problem
        self.result_ = res
        self.placement_ = res.pmu
        self.fractional_ = res.fractional
        self.cop_ = res.cop
        return self

    def score(self, pmu=None):
        check_is_fitted(self, "placement_")
        if pmu is None:
            return self.cop_.rho
        return float(self.model_.rho(np.asarray(pmu, dtype=float)))
