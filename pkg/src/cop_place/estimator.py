"""Gauss-Newton hybrid state estimation with per-iteration instrumentation."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .gain import constant_m
from .grid import ConstantMatrixSet, Grid, build_constant_matrices
from .linalg import spd_solve
from .measurements import (
    MeasurementEnsemble,
    Placement,
    Sigmas,
    eval_f,
    eval_jacobian,
    flat_state,
    noise_std,
    selection_mask,
)

__all__ = [
    "GnOptions",
    "GnTrace",
    "HybridStateEstimator",
    "IterationRecord",
    "pmu_initializer",
    "gauss_newton",
    "error_recursion_check",
    "convergence_radius",
    "tve",
]

logger = logging.getLogger(__name__)

# below this reciprocal condition number a gain counts as singular
_RCOND_FLOOR = 1e-15


@dataclass(frozen=True)
class GnOptions:
    max_iters: int = 50
    step_tolerance: float = 1e-10
    ridge: float = 0.0
    divergence_norm: float = 1e3

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (self.step_tolerance > 0 and self.divergence_norm > 0):
            raise ValueError("tolerances must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")


@dataclass
class IterationRecord:
    k: int
    v: np.ndarray
    tve: float = math.nan
    rho: float = math.nan
    phi: float = math.nan
    bound: float = math.nan
    lambda_min: float = math.nan
    rcond: float = math.nan
    ridge: bool = False


@dataclass
class GnTrace:
    records: list = field(default_factory=list)
    status: str = "max_iters"
    message: str = ""
    v_est: np.ndarray = None
    epsilon: float = math.nan
    beta: float = math.nan
    M: np.ndarray = field(default=None, repr=False)

    @property
    def n_iter(self) -> int:
        return max(len(self.records) - 1, 0)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def tve(self) -> np.ndarray:
        return np.array([r.tve for r in self.records])

    @property
    def rho(self) -> np.ndarray:
        return np.array([r.rho for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["iter", "tve", "rho", "phi_k", "bound"])
        for r in self.records:
            w.writerow([r.k, repr(r.tve), repr(r.rho), repr(r.phi), repr(r.bound)])
        return buf.getvalue()


def tve(v, v_true) -> float:
    """Total vector error in percent."""
    v_true = np.asarray(v_true, dtype=float)
    return float(np.linalg.norm(np.asarray(v) - v_true) / np.linalg.norm(v_true) * 100.0)


def pmu_initializer(z_voltage, v_prior, pmu) -> np.ndarray:
    """Measured phasors on PMU buses, prior elsewhere."""
    z_voltage = np.asarray(z_voltage, dtype=float)
    v_prior = np.asarray(v_prior, dtype=float)
    pmu = np.asarray(pmu)
    if z_voltage.shape != v_prior.shape or v_prior.shape != (2 * pmu.size,):
        raise ValueError("voltage block, prior and PMU vector have inconsistent sizes")
    keep = np.tile(pmu.astype(bool), 2)
    return np.where(keep, z_voltage, v_prior)


def convergence_radius(beta, phi, epsilon=0.0) -> float:
    """Initialisation radius within which the iteration provably converges."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if epsilon * math.sqrt(2.0 * phi) >= beta:
        raise ValueError("epsilon*sqrt(2*phi) >= beta: no convergence guarantee")
    if phi == 0:
        return math.inf
    return 2.0 * math.sqrt(beta / phi) - 2.0 * math.sqrt(2.0) * epsilon / math.sqrt(beta)


class _Problem:
    """Weighted, selected measurement model for one placement."""

    def __init__(self, z: MeasurementEnsemble, placement: Placement, mats: ConstantMatrixSet):
        self.mats = mats
        self.mask = selection_mask(placement, mats.grid)
        if z.z.shape != self.mask.shape:
            raise ValueError("measurement vector does not match the grid")
        self.w = 1.0 / z.std[self.mask]
        self.zA = z.z[self.mask]

    def residual(self, v):
        return (self.zA - eval_f(v, self.mats)[self.mask]) * self.w

    def jacobian(self, v):
        return eval_jacobian(v, self.mats)[self.mask] * self.w[:, None]


def _step(prob, v, opts):
    """One GN increment; returns ``(d, rcond, ridged, gain)`` or raises."""
    F = prob.jacobian(v)
    r = prob.residual(v)
    G = F.T @ F
    rhs = F.T @ r
    try:
        d, rcond = spd_solve(G, rhs)
        if rcond < _RCOND_FLOOR:
            raise np.linalg.LinAlgError(f"gain is numerically singular (rcond={rcond:.2e})")
        return d, rcond, False, G
    except np.linalg.LinAlgError:
        if not opts.ridge:
            raise
    scale = max(np.abs(np.diag(G)).max(), 1.0)
    d, rcond = spd_solve(G, rhs, ridge=opts.ridge * scale)
    return d, rcond, True, G


def _polish(prob, v, iters=10):
    """Tight-tolerance continuation to the fixed point."""
    for _ in range(iters):
        try:
            d, _, _, _ = _step(prob, v, GnOptions())
        except np.linalg.LinAlgError:
            break
        v = v + d
        if np.linalg.norm(d) < 1e-14 * max(1.0, np.linalg.norm(v)):
            break
    return v


def gauss_newton(
    z: MeasurementEnsemble,
    placement: Placement,
    v0,
    mats: ConstantMatrixSet,
    opts: GnOptions = GnOptions(),
    v_true=None,
    sigmas: Sigmas = None,
    instrument: bool = True,
):
    """Gauss-Newton iterations on the selected measurements.

    Returns ``(v, trace)``.  With ``instrument`` the trace carries, per
    iterate, the distance to the polished fixed point, the Rayleigh quotient
    of ``M`` along that error, the smallest gain eigenvalue and the predicted
    error bound for the next iterate.
    """
    prob = _Problem(z, placement, mats)
    v = np.array(v0, dtype=float)
    trace = GnTrace()
    rec = IterationRecord(0, v.copy())
    trace.records.append(rec)
    for k in range(1, opts.max_iters + 1):
        try:
            d, rcond, ridged, G = _step(prob, v, opts)
        except np.linalg.LinAlgError as exc:
            trace.status = "diverged"
            trace.message = str(exc)
            break
        rec.rcond = rcond
        rec.ridge = ridged
        if instrument:
            rec.lambda_min = float(np.linalg.eigvalsh(G)[0])
        v = v + d
        if not np.all(np.isfinite(v)) or np.linalg.norm(v) > opts.divergence_norm:
            trace.status = "diverged"
            trace.message = f"iterate norm {np.linalg.norm(v):.3g} exceeds {opts.divergence_norm:g}"
            rec = IterationRecord(k, v.copy())
            trace.records.append(rec)
            break
        rec = IterationRecord(k, v.copy())
        trace.records.append(rec)
        if np.linalg.norm(d) < opts.step_tolerance:
            trace.status = "converged"
            break
    if v_true is not None:
        for r in trace.records:
            r.tve = tve(r.v, v_true) if np.all(np.isfinite(r.v)) else math.inf
    if instrument and trace.converged:
        _instrument(trace, prob, placement, mats, sigmas or _sigmas_from(z, mats))
    return v, trace


def _sigmas_from(z, mats):
    N, L = mats.grid.n_buses, mats.grid.n_lines
    s = z.std
    return Sigmas(voltage=s[0], current=s[2 * N] if L else 1.0, injection=s[2 * N + 4 * L], flow=s[-1] if L else 1.0)


def _instrument(trace, prob, placement, mats, sigmas):
    v_est = _polish(prob, trace.records[-1].v)
    M = constant_m(placement.injections, placement.flows, mats, sigmas)
    F = prob.jacobian(v_est)
    lam_est = float(np.linalg.eigvalsh(F.T @ F)[0])
    last = trace.records[-1]
    if math.isnan(last.lambda_min):
        last.lambda_min = float(np.linalg.eigvalsh(prob.jacobian(last.v).T @ prob.jacobian(last.v))[0])
    lams = [r.lambda_min for r in trace.records] + [lam_est]
    trace.v_est = v_est
    trace.M = M
    trace.epsilon = float(np.linalg.norm(prob.residual(v_est)))
    trace.beta = float(min(lams))
    for r in trace.records:
        e = r.v - v_est
        r.rho = float(np.linalg.norm(e))
        r.phi = float(e @ M @ e / (e @ e)) if r.rho > 0 else 0.0
        r.bound = _recursion_bound(r.rho, r.phi, trace.beta, trace.epsilon)


def _recursion_bound(rho, phi, beta, eps):
    if beta <= 0:
        return math.inf
    return 0.5 * math.sqrt(phi / beta) * rho**2 + eps * math.sqrt(2.0 * phi) / beta * rho


def error_recursion_check(trace: GnTrace, beta=None, epsilon=None, slack=1e-8) -> np.ndarray:
    """Per transition ``k -> k+1``: is ``rho_{k+1}`` within the predicted bound?

    ``beta`` defaults to the smallest gain eigenvalue seen along the trace and
    ``epsilon`` to the weighted residual norm at the fixed point.
    """
    if trace.v_est is None:
        raise ValueError("trace has no fixed-point reference; run an instrumented, converged solve")
    beta = trace.beta if beta is None else beta
    epsilon = trace.epsilon if epsilon is None else epsilon
    recs = trace.records
    out = np.empty(len(recs) - 1, dtype=bool)
    for k in range(len(recs) - 1):
        bound = _recursion_bound(recs[k].rho, recs[k].phi, beta, epsilon)
        out[k] = recs[k + 1].rho <= bound + slack
    return out


class HybridStateEstimator(BaseEstimator):
    """Estimator-style wrapper around :func:`gauss_newton`.

    ``fit(z, placement)`` takes the full measurement vector (rows not selected
    by ``placement`` are ignored) and stores ``state_``; ``predict`` returns
    the noiseless measurement ensemble at that state.
    """

    def __init__(self, grid: Grid = None, sigmas: Sigmas = None, max_iters=50, step_tolerance=1e-10, ridge=0.0, divergence_norm=1e3):
        self.grid = grid
        self.sigmas = sigmas
        self.max_iters = max_iters
        self.step_tolerance = step_tolerance
        self.ridge = ridge
        self.divergence_norm = divergence_norm

    def fit(self, z, placement: Placement, v0=None, v_true=None):
        if self.grid is None:
            raise ValueError("grid must be set before fitting")
        mats = build_constant_matrices(self.grid)
        sigmas = self.sigmas or Sigmas()
        if isinstance(z, MeasurementEnsemble):
            ens = z
        else:
            vec = check_array(np.asarray(z, dtype=float).reshape(1, -1)).ravel()
            ens = MeasurementEnsemble(z=vec, std=noise_std(self.grid, sigmas), grid=self.grid)
        N = self.grid.n_buses
        if v0 is None:
            v0 = pmu_initializer(ens.z[: 2 * N], flat_state(N), placement.pmu)
        opts = GnOptions(self.max_iters, self.step_tolerance, self.ridge, self.divergence_norm)
        v, trace = gauss_newton(ens, placement, v0, mats, opts, v_true=v_true, sigmas=sigmas)
        self.mats_ = mats
        self.state_ = v
        self.trace_ = trace
        self.n_iter_ = trace.n_iter
        self.status_ = trace.status
        return self

    def predict(self, X=None):
        check_is_fitted(self, "state_")
        return eval_f(self.state_, self.mats_)

    def score(self, v_true):
        """Negative TVE (percent) against a known state, so larger is better."""
        check_is_fitted(self, "state_")
        return -tve(self.state_, v_true)
