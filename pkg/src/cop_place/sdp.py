"""Small dense SDP solver for programs of the form::

    maximize    c . y
    subject to  A_j0 + sum_i y_i A_ji  >= 0      (each LMI block j)
                G y <= h,   lower <= y <= upper

Log-det barrier method with damped Newton centering and a phase-I stage that
locates a strictly feasible point.  Coefficient matrices may be dense or given
as symmetric low-rank factors ``U diag(w) U^T``; the Hessian is assembled from
the factors, so a block with many rank-few coefficients costs ``O(d^2 R +
d R^2)`` per Newton step (``R`` the total factor rank).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

__all__ = [
    "LowRank",
    "LmiBlock",
    "LmiProgram",
    "SdpSolution",
    "SdpOptions",
    "solve",
    "write_sdpa",
    "read_sdpa",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LowRank:
    """Symmetric matrix ``U diag(w) U^T``."""

    U: np.ndarray
    w: np.ndarray

    @property
    def shape(self):
        d = self.U.shape[0]
        return (d, d)

    def toarray(self) -> np.ndarray:
        return (self.U * self.w) @ self.U.T

    @classmethod
    def from_dense(cls, A, rtol=1e-13) -> "LowRank":
        A = np.asarray(A, dtype=float)
        w, V = np.linalg.eigh(0.5 * (A + A.T))
        top = np.abs(w).max() if w.size else 0.0
        keep = np.abs(w) > rtol * top
        return cls(V[:, keep], w[keep])

    @classmethod
    def from_pair(cls, a, b) -> "LowRank":
        """``a b^T + b a^T`` for tall ``a``, ``b`` of equal width."""
        Q, R = np.linalg.qr(np.hstack([a, b]))
        k = a.shape[1]
        Ra, Rb = R[:, :k], R[:, k:]
        core = Ra @ Rb.T
        core = core + core.T
        w, V = np.linalg.eigh(core)
        keep = np.abs(w) > 1e-14 * max(np.abs(w).max(), 1e-300)
        return cls(Q @ V[:, keep], w[keep])


def _as_dense(A):
    return A.toarray() if isinstance(A, LowRank) else np.asarray(A, dtype=float)


@dataclass(eq=False)
class LmiBlock:
    constant: np.ndarray
    coeffs: dict
    name: str = ""

    @property
    def dim(self) -> int:
        return self.constant.shape[0]

    def evaluate(self, y) -> np.ndarray:
        F = np.array(self.constant, dtype=float)
        for i, A in self.coeffs.items():
            if y[i] != 0:
                F += y[i] * _as_dense(A)
        return F


@dataclass(eq=False)
class LmiProgram:
    objective: np.ndarray
    blocks: list
    G: np.ndarray = None
    h: np.ndarray = None
    lower: np.ndarray = None
    upper: np.ndarray = None
    var_names: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        p = self.objective.size
        if self.G is None:
            self.G = np.zeros((0, p))
            self.h = np.zeros(0)
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float)).reshape(-1, p)
        self.h = np.asarray(self.h, dtype=float).reshape(-1)
        if self.G.shape[0] != self.h.size:
            raise ValueError("G and h disagree in row count")
        self.lower = np.full(p, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
        self.upper = np.full(p, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        for j, blk in enumerate(self.blocks):
            d = blk.dim
            C = np.asarray(blk.constant)
            if C.shape != (d, d) or not np.allclose(C, C.T, atol=1e-12 * max(1.0, np.abs(C).max())):
                raise ValueError(f"block {j} constant is not a symmetric {d}x{d} matrix")
            for i, A in blk.coeffs.items():
                if not 0 <= i < p:
                    raise ValueError(f"block {j} references variable {i} outside 0..{p - 1}")
                if A.shape != (d, d):
                    raise ValueError(f"block {j} coefficient {i} has shape {A.shape}, expected {(d, d)}")
                if not isinstance(A, LowRank):
                    A = np.asarray(A)
                    if not np.allclose(A, A.T, atol=1e-12 * max(1.0, np.abs(A).max())):
                        raise ValueError(f"block {j} coefficient {i} is not symmetric")

    @property
    def n_vars(self) -> int:
        return self.objective.size

    def linear_system(self):
        """All scalar constraints, bounds included, as ``G y <= h``."""
        p = self.n_vars
        rows, rhs = [self.G], [self.h]
        eye = np.eye(p)
        lo = np.isfinite(self.lower)
        hi = np.isfinite(self.upper)
        rows += [-eye[lo], eye[hi]]
        rhs += [-self.lower[lo], self.upper[hi]]
        return np.vstack(rows), np.concatenate(rhs)

    def block_margins(self, y) -> np.ndarray:
        return np.array([np.linalg.eigvalsh(b.evaluate(y))[0] if b.dim else np.inf for b in self.blocks])

    def feasibility_margin(self, y) -> float:
        """Most negative block eigenvalue or linear slack at ``y``."""
        G, h = self.linear_system()
        vals = list(self.block_margins(y))
        if h.size:
            vals.append(float((h - G @ y).min()))
        return float(min(vals)) if vals else math.inf


@dataclass
class SdpOptions:
    feas_tol: float = 1e-7
    gap_tol: float = 1e-6
    # gap measured against max(1, |objective|) instead of absolutely
    rel_gap: bool = False
    max_iter: int = 200
    mu: float = 20.0
    t0: float = 1.0
    newton_tol: float = 1e-9


@dataclass
class SdpSolution:
    y: np.ndarray
    objective: float
    status: str  # optimal | infeasible | unbounded | max_iter
    margin: float
    bound: float = math.nan
    iterations: int = 0
    violated_block: int | None = None
    log: list = field(default_factory=list)
    # centred iterates as (t, y) pairs, usable as warm starts
    path: list = field(default_factory=list, repr=False)

    @property
    def gap(self) -> float:
        return self.bound - self.objective


# ---------------------------------------------------------------------------
# barrier machinery


class _BlockData:
    def __init__(self, block: LmiBlock, extra=None):
        d = block.dim
        self.dim = d
        self.constant = np.asarray(block.constant, dtype=float)
        items = sorted(block.coeffs.items())
        if extra is not None:
            items.append(extra)
        Us, ws, owners = [], [], []
        for i, A in items:
            lr = A if isinstance(A, LowRank) else LowRank.from_dense(A)
            if lr.w.size == 0:
                continue
            Us.append(lr.U)
            ws.append(lr.w)
            owners.append(np.full(lr.w.size, i))
        if Us:
            self.U = np.hstack(Us)
            self.w = np.concatenate(ws)
            owner = np.concatenate(owners)
        else:
            self.U = np.zeros((d, 0))
            self.w = np.zeros(0)
            owner = np.zeros(0, dtype=int)
        self.vars, self.starts = np.unique(owner, return_index=True)

    def matrix(self, y):
        coef = self.w * y[self._owner_vector()]
        return self.constant + (self.U * coef) @ self.U.T

    def _owner_vector(self):
        if not hasattr(self, "_owner"):
            counts = np.diff(np.append(self.starts, self.w.size))
            self._owner = np.repeat(self.vars, counts)
        return self._owner

    def chol(self, y):
        F = self.matrix(y)
        try:
            return sla.cholesky(F, lower=True, check_finite=False)
        except (sla.LinAlgError, ValueError):
            return None

    def derivatives(self, L, p):
        """Gradient and Hessian of ``-log det F`` given ``chol(F) = L``."""
        g = np.zeros(p)
        H = np.zeros((p, p))
        if self.w.size == 0:
            return g, H
        W = sla.solve_triangular(L, self.U, lower=True, check_finite=False)
        Gm = W.T @ W
        g[self.vars] = -np.add.reduceat(self.w * np.diag(Gm), self.starts)
        Wg = self.w[:, None] * Gm
        T = Wg * Wg.T
        Hb = np.add.reduceat(np.add.reduceat(T, self.starts, axis=0), self.starts, axis=1)
        H[np.ix_(self.vars, self.vars)] = Hb
        return g, H


class _Barrier:
    def __init__(self, blocks, G, h, c, ball=None):
        self.blocks = blocks
        self.G, self.h, self.c = G, h, c
        self.ball = ball  # (center, radius) or None
        self.theta = sum(b.dim for b in blocks) + h.size + (1 if ball else 0)

    def value(self, y, t):
        """Barrier objective, or ``inf`` outside the domain."""
        return -t * (self.c @ y) + self.log_part(y)

    def log_part(self, y):
        """``-sum log`` of every slack, ``inf`` outside the domain."""
        total = 0.0
        for b in self.blocks:
            L = b.chol(y)
            if L is None:
                return math.inf
            total -= 2.0 * np.log(np.diag(L)).sum()
        if self.h.size:
            s = self.h - self.G @ y
            if np.any(s <= 0):
                return math.inf
            total -= np.log(s).sum()
        if self.ball is not None:
            q = self.ball[1] ** 2 - np.sum((y - self.ball[0]) ** 2)
            if q <= 0:
                return math.inf
            total -= math.log(q)
        return total

    def derivatives(self, y, t):
        p = y.size
        g = -t * self.c.copy()
        H = np.zeros((p, p))
        for b in self.blocks:
            L = b.chol(y)
            gb, Hb = b.derivatives(L, p)
            g += gb
            H += Hb
        if self.h.size:
            s = self.h - self.G @ y
            g += self.G.T @ (1.0 / s)
            H += (self.G.T / s**2) @ self.G
        if self.ball is not None:
            dy = y - self.ball[0]
            q = self.ball[1] ** 2 - dy @ dy
            g += 2.0 * dy / q
            H += 2.0 * np.eye(p) / q + 4.0 * np.outer(dy, dy) / q**2
        return g, H


def _newton_step(H, g):
    p = g.size
    # Jacobi scaling keeps the Cholesky usable late in the barrier path
    dg = np.sqrt(np.maximum(np.diag(H), 1e-300))
    Hs = H / np.outer(dg, dg)
    gs = g / dg
    for reg in (0.0, 1e-14, 1e-12, 1e-10, 1e-8):
        try:
            c = sla.cho_factor(Hs + reg * np.eye(p), lower=True, check_finite=False)
            return -sla.cho_solve(c, gs, check_finite=False) / dg
        except (sla.LinAlgError, ValueError):
            continue
    return -np.linalg.lstsq(Hs, gs, rcond=None)[0] / dg


# a stalled line search counts as centred below this decrement
_STALL_DECREMENT = 1e-3


def _center(bar, y, t, opts, budget, stop=None):
    """Damped Newton centering.

    Returns ``(y, newton_steps, state)`` with ``state`` one of ``centred``,
    ``stalled`` (line search cannot improve while the decrement is still
    large), ``budget``, ``stop`` (the ``stop`` predicate fired) or
    ``diverging``.  The Armijo test uses the objective change ``t c.dy``
    directly rather than a difference of two large barrier values, which would
    lose all precision once ``t`` is large.
    """
    steps = 0
    creeping = 0
    logp = bar.log_part(y)
    while steps < budget:
        g, H = bar.derivatives(y, t)
        dy = _newton_step(H, g)
        lam2 = -(g @ dy)
        steps += 1
        if not np.isfinite(lam2):
            return y, steps, "stalled"
        if lam2 / 2.0 <= opts.newton_tol:
            return y, steps, "centred"
        slope = -t * (bar.c @ dy)
        alpha = 1.0
        while alpha > 1e-12:
            y_new = y + alpha * dy
            logp_new = bar.log_part(y_new)
            if alpha * slope + (logp_new - logp) <= -0.25 * alpha * lam2:
                break
            alpha *= 0.5
        else:
            return y, steps, "centred" if lam2 <= _STALL_DECREMENT else "stalled"
        y, logp = y_new, logp_new
        creeping = creeping + 1 if alpha < 1e-3 else 0
        if creeping and lam2 <= _STALL_DECREMENT:
            # creeping at the rounding floor
            return y, steps, "centred"
        if creeping >= 20:
            return y, steps, "stalled"
        if stop is not None and stop(y):
            return y, steps, "stop"
        if np.linalg.norm(y) > 1e12:
            return y, steps, "diverging"
    return y, steps, "budget"


def _interior_start(prog):
    """Point of the box nearest the origin, kept at most 1 inside each bound."""
    lo, hi = prog.lower, prog.upper
    pad = np.minimum(1.0, 0.5 * (hi - lo))
    return np.clip(np.zeros(prog.n_vars), lo + pad, hi - pad)


def _phase_one(prog, y0, opts):
    """Find ``y`` with every block and linear slack strictly positive.

    Returns ``(y, feasible, steps, s_star)``.
    """
    p = prog.n_vars
    G, h = prog.linear_system()
    margins = [np.linalg.eigvalsh(b.evaluate(y0))[0] for b in prog.blocks if b.dim]
    if h.size:
        margins.append(float((h - G @ y0).min()))
    m0 = min(margins) if margins else 1.0
    if m0 > 0:
        return y0, True, 0, -m0
    s0 = -m0 + 1.0
    scale = max(1.0, s0)
    blocks = [_BlockData(b, extra=(p, LowRank(np.eye(b.dim), np.ones(b.dim)))) for b in prog.blocks]
    G1 = np.hstack([G, -np.ones((G.shape[0], 1))])
    # s >= -scale keeps the auxiliary problem bounded
    G1 = np.vstack([G1, np.append(np.zeros(p), -1.0)])
    h1 = np.append(h, scale)
    c1 = np.append(np.zeros(p), -1.0)
    z0 = np.append(y0, s0)
    radius = 1e4 * max(1.0, np.linalg.norm(y0), s0)
    bar = _Barrier(blocks, G1, h1, c1, ball=(z0.copy(), radius))
    t = opts.t0
    z = z0
    steps = 0

    def strictly_feasible(zz):
        return zz[-1] < -1e-9 * scale

    while steps < opts.max_iter:
        z, k, state = _center(bar, z, t, opts, opts.max_iter - steps, stop=strictly_feasible)
        steps += k
        logger.debug("phase I t=%.3g: %s after %d Newton steps, s=%.3e", t, state, k, z[-1])
        if state == "stop" or strictly_feasible(z):
            return z[:p], True, steps, z[-1]
        if state in ("budget", "stalled", "diverging"):
            break
        if bar.theta / t < opts.feas_tol * scale:
            break
        t *= opts.mu
    return z[:p], False, steps, z[-1]


def solve(prog: LmiProgram, feas_tol=1e-7, gap_tol=1e-6, max_iter=200, y0=None, **kw) -> SdpSolution:
    """Maximise ``prog.objective . y`` over the LMI-constrained set."""
    opts = SdpOptions(feas_tol=feas_tol, gap_tol=gap_tol, max_iter=max_iter, **kw)
    y0 = _interior_start(prog) if y0 is None else np.asarray(y0, dtype=float)
    y, feasible, steps1, s_star = _phase_one(prog, y0, opts)
    if not feasible:
        margins = prog.block_margins(y)
        bad = np.flatnonzero(margins < 0)
        violated = int(bad[0]) if bad.size else None
        logger.info("phase I failed: s*=%.3e, first violated block %s", s_star, violated)
        return SdpSolution(
            y=y,
            objective=float(prog.objective @ y),
            status="infeasible",
            margin=prog.feasibility_margin(y),
            iterations=steps1,
            violated_block=violated,
        )
    G, h = prog.linear_system()
    blocks = [_BlockData(b) for b in prog.blocks]
    bar = _Barrier(blocks, G, h, prog.objective)
    t = opts.t0
    steps = 0
    log = []
    path = []
    status = "max_iter"
    while steps < opts.max_iter:
        y, k, state = _center(bar, y, t, opts, opts.max_iter - steps)
        steps += k
        obj = float(prog.objective @ y)
        log.append(obj)
        logger.debug("t=%.3g: %s after %d Newton steps, obj=%.9g", t, state, k, obj)
        if state == "diverging" or np.linalg.norm(y) > 1e12:
            status = "unbounded"
            break
        if state != "centred":
            # the duality-gap bound theta/t only holds on the central path
            logger.info("centering ended %s at t=%.3g", state, t)
            break
        path.append((t, y.copy()))
        gap_scale = max(1.0, abs(obj)) if opts.rel_gap else 1.0
        if bar.theta / t <= opts.gap_tol * gap_scale:
            status = "optimal"
            break
        t *= opts.mu
    obj = float(prog.objective @ y)
    margin = prog.feasibility_margin(y)
    if status == "optimal" and margin < -opts.feas_tol:
        status = "max_iter"
    bound = obj + bar.theta / t if status != "unbounded" else math.inf
    logger.debug("sdp %s after %d+%d Newton steps, obj=%.9g", status, steps1, steps, obj)
    return SdpSolution(
        y=y,
        objective=obj,
        status=status,
        margin=margin,
        bound=bound,
        iterations=steps1 + steps,
        log=log,
        path=path,
    )


# ---------------------------------------------------------------------------
# SDPA sparse format


def write_sdpa(prog: LmiProgram, path_or_file):
    """Write the program in SDPA sparse format (``.dat-s``).

    SDPA minimises ``c^T x`` subject to ``sum_i F_i x_i - F_0 >= 0``; scalar
    constraints and bounds go into one trailing diagonal block.
    """
    G, h = prog.linear_system()
    lines = [f'"cop-place LMI program: {len(prog.blocks)} LMI blocks, {h.size} linear rows"']
    lines.append(str(prog.n_vars))
    nblocks = len(prog.blocks) + (1 if h.size else 0)
    lines.append(str(nblocks))
    struct = [str(b.dim) for b in prog.blocks] + ([str(-h.size)] if h.size else [])
    lines.append(" ".join(struct))
    lines.append(" ".join(repr(float(-c)) for c in prog.objective))

    def emit(mat_no, blk_no, A):
        A = _as_dense(A)
        iu, ju = np.triu_indices(A.shape[0])
        vals = A[iu, ju]
        for i, j, v in zip(iu, ju, vals):
            if v != 0:
                lines.append(f"{mat_no} {blk_no} {i + 1} {j + 1} {float(v)!r}")

    for bj, blk in enumerate(prog.blocks, start=1):
        emit(0, bj, -np.asarray(blk.constant, dtype=float))
        for i, A in sorted(blk.coeffs.items()):
            emit(i + 1, bj, A)
    if h.size:
        bj = len(prog.blocks) + 1
        for r in range(h.size):
            if h[r] != 0:
                lines.append(f"0 {bj} {r + 1} {r + 1} {float(-h[r])!r}")
        for i in range(prog.n_vars):
            for r in np.flatnonzero(G[:, i]):
                lines.append(f"{i + 1} {bj} {r + 1} {r + 1} {float(-G[r, i])!r}")
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w") as fh:
            fh.write(text)


def read_sdpa(path_or_file) -> LmiProgram:
    """Read an SDPA sparse file into a maximisation :class:`LmiProgram`."""
    if hasattr(path_or_file, "read"):
        text = path_or_file.read()
    else:
        with open(path_or_file) as fh:
            text = fh.read()
    tokens_lines = []
    for raw in text.splitlines():
        s = raw.strip()
        if not s or s[0] in '"*':
            continue
        tokens_lines.append(s.replace(",", " ").replace("{", " ").replace("}", " ").replace("(", " ").replace(")", " "))
    header = " ".join(tokens_lines[:4]).split()
    m = int(header[0])
    nb = int(header[1])
    struct = [int(x) for x in header[2 : 2 + nb]]
    c = np.array([float(x) for x in header[2 + nb : 2 + nb + m]])
    mats = [[None] * (m + 1) for _ in range(nb)]
    for b, size in enumerate(struct):
        d = abs(size)
        for k in range(m + 1):
            mats[b][k] = np.zeros((d, d))
    rest = " ".join(tokens_lines[4:]).split() if len(header) <= 2 + nb + m else header[2 + nb + m :] + " ".join(tokens_lines[4:]).split()
    for k in range(0, len(rest), 5):
        mat_no, blk, i, j = (int(x) for x in rest[k : k + 4])
        v = float(rest[k + 4])
        A = mats[blk - 1][mat_no]
        A[i - 1, j - 1] = v
        A[j - 1, i - 1] = v
    blocks, G_rows, h_rows = [], [], []
    for b, size in enumerate(struct):
        if size > 0:
            coeffs = {i: mats[b][i + 1] for i in range(m) if np.any(mats[b][i + 1])}
            blocks.append(LmiBlock(constant=-mats[b][0], coeffs=coeffs, name=f"block{b + 1}"))
        else:
            d = -size
            for r in range(d):
                h_rows.append(-mats[b][0][r, r])
                G_rows.append([-mats[b][i + 1][r, r] for i in range(m)])
    G = np.array(G_rows).reshape(-1, m)
    h = np.array(h_rows)
    return LmiProgram(objective=-c, blocks=blocks, G=G, h=h)
