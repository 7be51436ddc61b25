"""Gain-matrix components and the COP (convergence-observability-performance)
metric of a PMU placement.

For a fixed SCADA placement the Gauss-Newton gain splits into a PMU part
``P(pmu)``, linear in the PMU vector, and a SCADA part ``S(V)``, linear in
``V = v v^T``.  ``M = S(I)`` is the constant matrix for which
``||F_A(v) - F_A(v')||_F^2 = (v - v')^T M (v - v')``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .grid import ConstantMatrixSet
from .linalg import EIG_RTOL, sqrt_psd
from .measurements import Placement, Sigmas, flat_state

__all__ = [
    "FailurePattern",
    "CopReport",
    "GainModel",
    "gain_pmu",
    "gain_scada",
    "constant_m",
    "failure_patterns",
    "beta_approx",
    "phi_approx",
    "cop_metric",
    "critical_check",
    "cop_key",
]


@dataclass(frozen=True)
class FailurePattern:
    """SCADA placement with one present measurement removed."""

    kind: str  # "injection" or "flow"
    index: int  # bus index or directed-line index
    injections: np.ndarray = field(repr=False)
    flows: np.ndarray = field(repr=False)


def failure_patterns(injections, flows) -> list[FailurePattern]:
    """One pattern per present injection, then one per present flow."""
    injections = np.asarray(injections, dtype=np.int8)
    flows = np.asarray(flows, dtype=np.int8)
    out = []
    for n in np.flatnonzero(injections):
        inj = injections.copy()
        inj[n] = 0
        out.append(FailurePattern("injection", int(n), inj, flows))
    for k in np.flatnonzero(flows):
        fl = flows.copy()
        fl[k] = 0
        out.append(FailurePattern("flow", int(k), injections, fl))
    return out


def _pmu_factor(mats, n, sigmas):
    """``U_n`` with ``U_n U_n^T`` the PMU contribution of bus ``n``."""
    N = mats.grid.n_buses
    E = np.zeros((2 * N, 2))
    E[n, 0] = E[N + n, 1] = 1.0 / sigmas.voltage
    H = np.vstack([mats.H_I[n].toarray(), mats.H_J[n].toarray()]).T / sigmas.current
    return np.hstack([E, H])


def gain_pmu(pmu, mats: ConstantMatrixSet, sigmas: Sigmas = Sigmas()) -> np.ndarray:
    """``P(pmu)``; fractional PMU vectors are allowed (the map is linear)."""
    pmu = np.asarray(pmu, dtype=float)
    d = mats.dim
    P = np.zeros((d, d))
    for n in np.flatnonzero(pmu):
        U = _pmu_factor(mats, n, sigmas)
        P += pmu[n] * (U @ U.T)
    return P


def _site_weights(mats, injections, flows, sigmas):
    """Per-quadratic-form weights ``1/sigma^2`` (zero when absent)."""
    inj = np.asarray(injections, dtype=float) / sigmas.injection**2
    fl = np.asarray(flows, dtype=float) / sigmas.flow**2
    return np.concatenate([inj, inj, fl, fl])


def gain_scada(V, injections, flows, mats: ConstantMatrixSet, sigmas: Sigmas = Sigmas()) -> np.ndarray:
    """``S(V, I, F) = sum_k w_k (A_k + A_k^T) V (A_k + A_k^T)``.

    ``V`` may be a 2N x 2N symmetric matrix or a state vector ``v``, which is
    read as ``V = v v^T``.
    """
    w = _site_weights(mats, injections, flows, sigmas)
    V = np.asarray(V, dtype=float)
    d = mats.dim
    if V.ndim == 1:
        rows = (mats.stacked_forms @ V).reshape(-1, d)
        return (rows.T * w) @ rows
    S = np.zeros((d, d))
    for k in np.flatnonzero(w):
        H = mats.quadratic_forms[k]
        S += w[k] * (H @ (H @ V).T).T
    return 0.5 * (S + S.T)


def constant_m(injections, flows, mats: ConstantMatrixSet, sigmas: Sigmas = Sigmas()) -> np.ndarray:
    """``M = S(I_2N, I, F)``."""
    w = _site_weights(mats, injections, flows, sigmas)
    d = mats.dim
    M = np.zeros((d, d))
    for k in np.flatnonzero(w):
        H = mats.quadratic_forms[k]
        M += w[k] * (H @ H).toarray()
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class CopReport:
    beta: float
    phi: float
    rho: float
    mse_bound: float
    critical_ok: tuple = ()
    status: str = "ok"

    @property
    def feasible(self) -> bool:
        return self.beta > 0 and all(self.critical_ok)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "phi": self.phi,
            "rho": self.rho,
            "mse_bound": self.mse_bound,
            "critical_ok": all(self.critical_ok),
            "n_patterns": len(self.critical_ok),
            "status": self.status,
        }


def cop_key(report: CopReport):
    """Sort key: larger rho first, then larger beta (infinite rho ranks top)."""
    return (report.rho, report.beta)


def _rho(beta, phi):
    beta = np.asarray(beta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(phi > 0, beta / np.where(phi > 0, phi, 1.0), np.where(beta > 0, np.inf, 0.0))
    return rho


class GainModel:
    """Gain components for one grid, SCADA placement, noise model and prior.

    Caches per-bus PMU terms, ``S(v_prior v_prior^T)``, ``M`` and the
    weighted SCADA Jacobian rows at the prior so that many candidate PMU
    vectors can be scored in batches.
    """

    def __init__(self, mats: ConstantMatrixSet, injections, flows, sigmas: Sigmas = Sigmas(), v_prior=None):
        self.mats = mats
        self.grid = mats.grid
        self.sigmas = sigmas
        N = self.grid.n_buses
        self.injections = np.asarray(injections, dtype=np.int8).copy()
        self.flows = np.asarray(flows, dtype=np.int8).copy()
        if self.injections.shape != (N,) or self.flows.shape != (2 * self.grid.n_lines,):
            raise ValueError("SCADA masks do not match the grid")
        self.v_prior = flat_state(N) if v_prior is None else np.asarray(v_prior, dtype=float)
        self.pmu_factors = [_pmu_factor(mats, n, sigmas) for n in range(N)]
        self.P_terms = np.stack([U @ U.T for U in self.pmu_factors])
        self.patterns = failure_patterns(self.injections, self.flows)

    @property
    def dim(self) -> int:
        return self.mats.dim

    @classmethod
    def from_placement(cls, mats, placement: Placement, sigmas=Sigmas(), v_prior=None):
        return cls(mats, placement.injections, placement.flows, sigmas, v_prior)

    @cached_property
    def _prior_rows(self):
        """Weighted SCADA rows at the prior, one (P, Q) pair per present site."""
        d = self.dim
        rows = (self.mats.stacked_forms @ self.v_prior).reshape(-1, d)
        N, D = self.grid.n_buses, 2 * self.grid.n_lines
        si, sf = 1.0 / self.sigmas.injection, 1.0 / self.sigmas.flow
        out = {}
        for n in np.flatnonzero(self.injections):
            out[("injection", int(n))] = np.vstack([rows[n], rows[N + n]]) * si
        for k in np.flatnonzero(self.flows):
            out[("flow", int(k))] = np.vstack([rows[2 * N + k], rows[2 * N + D + k]]) * sf
        return out

    @cached_property
    def S_prior(self) -> np.ndarray:
        return gain_scada(self.v_prior, self.injections, self.flows, self.mats, self.sigmas)

    @cached_property
    def M(self) -> np.ndarray:
        return constant_m(self.injections, self.flows, self.mats, self.sigmas)

    @cached_property
    def M_sqrt(self) -> np.ndarray:
        return sqrt_psd(self.M)

    @cached_property
    def lambda_max_M(self) -> float:
        return float(np.linalg.eigvalsh(self.M)[-1]) if self.M.size else 0.0

    def S_pattern(self, pattern: FailurePattern) -> np.ndarray:
        R = self._prior_rows[(pattern.kind, pattern.index)]
        return self.S_prior - R.T @ R

    def P(self, pmu) -> np.ndarray:
        pmu = np.asarray(pmu, dtype=float)
        if pmu.ndim == 1 and np.all((pmu == 0) | (pmu == 1)):
            # binary vectors: sum only the selected terms
            return self.P_terms[pmu.astype(bool)].sum(axis=0)
        return np.tensordot(pmu, self.P_terms, axes=(-1, 0))

    def gain_prior(self, pmu) -> np.ndarray:
        return self.P(pmu) + self.S_prior

    # -- scalar metrics, batched over leading axes of ``pmu`` -------------

    def beta(self, pmu):
        G = self.gain_prior(pmu)
        return _clamped_min_eig(G)

    def phi(self, pmu):
        pmu = np.asarray(pmu, dtype=float)
        keep = np.concatenate([1.0 - pmu, 1.0 - pmu], axis=-1)
        A = keep[..., :, None] * self.M * keep[..., None, :]
        hi = np.linalg.eigvalsh(A)[..., -1]
        return np.where(hi <= EIG_RTOL * max(self.lambda_max_M, 0.0), 0.0, hi)

    def rho(self, pmu):
        return _rho(self.beta(pmu), self.phi(pmu))

    def critical(self, pmu, beta_min, patterns=None):
        """Boolean per failure pattern (trailing axis) for each PMU vector."""
        patterns = self.patterns if patterns is None else patterns
        pmu = np.asarray(pmu, dtype=float)
        base = self.P(pmu)
        out = np.ones(pmu.shape[:-1] + (len(patterns),), dtype=bool)
        for j, pat in enumerate(patterns):
            lam = _clamped_min_eig(base + self.S_pattern(pat))
            out[..., j] = lam >= beta_min
        return out

    @cached_property
    def _pattern_gains(self):
        return [self.S_pattern(p) for p in self.patterns]

    def passes(self, pmu, beta_min) -> bool:
        """Same verdict as ``critical(pmu, beta_min).all()`` for one binary
        vector, but stops at the first failing pattern.

        Each pattern is screened with a Cholesky factorisation of
        ``G - beta_min (1 + 1e-9) I``; only a failed factorisation is confirmed
        with an eigenvalue solve.  Patterns that failed recently are tried
        first, which changes the cost but never the answer.
        """
        if not hasattr(self, "_fail_order"):
            self._fail_order = list(range(len(self.patterns)))
        base = self.P(pmu)
        shift = beta_min * (1.0 + 1e-9) * np.eye(self.dim)
        for pos, j in enumerate(self._fail_order):
            G = base + self._pattern_gains[j]
            try:
                sla.cholesky(G - shift, lower=True, check_finite=False)
                continue
            except sla.LinAlgError:
                pass
            if _clamped_min_eig(G) < beta_min:
                self._fail_order.insert(0, self._fail_order.pop(pos))
                return False
        return True

    def report(self, pmu, beta_min=None, patterns=None) -> CopReport:
        pmu = np.asarray(pmu, dtype=float)
        beta = float(self.beta(pmu))
        phi = float(self.phi(pmu))
        rho = float(_rho(beta, phi))
        if beta == 0 and phi == 0:
            status = "degenerate"
        elif beta == 0:
            status = "unobservable"
        else:
            status = "ok"
        crit = ()
        if beta_min is not None:
            crit = tuple(bool(x) for x in self.critical(pmu, beta_min, patterns))
        mse = 2 * self.grid.n_buses / beta if beta > 0 else math.inf
        return CopReport(beta=beta, phi=phi, rho=rho, mse_bound=mse, critical_ok=crit, status=status)


def _clamped_min_eig(G):
    w = np.linalg.eigvalsh(G)
    lo = w[..., 0]
    hi = np.abs(w).max(axis=-1)
    return np.where(lo <= EIG_RTOL * hi, 0.0, lo)


# ---------------------------------------------------------------------------
# functional entry points


def beta_approx(placement: Placement, mats, sigmas=Sigmas(), v_prior=None) -> float:
    """``lambda_min[P(pmu) + S(v_prior v_prior^T)]`` clamped at 0."""
    if v_prior is None:
        v_prior = flat_state(mats.grid.n_buses)
    G = gain_pmu(placement.pmu, mats, sigmas) + gain_scada(
        v_prior, placement.injections, placement.flows, mats, sigmas
    )
    return float(_clamped_min_eig(G))


def phi_approx(pmu, M) -> float:
    """``lambda_max[(I - J_V) M (I - J_V)]``."""
    pmu = np.asarray(pmu, dtype=float)
    keep = np.concatenate([1.0 - pmu, 1.0 - pmu])
    A = keep[:, None] * M * keep[None, :]
    if A.size == 0:
        return 0.0
    hi = float(np.linalg.eigvalsh(A)[-1])
    top = float(np.linalg.eigvalsh(M)[-1])
    return 0.0 if hi <= EIG_RTOL * max(top, 0.0) else hi


def cop_metric(placement: Placement, mats, sigmas=Sigmas(), v_prior=None, beta_min=None) -> CopReport:
    model = GainModel.from_placement(mats, placement, sigmas, v_prior)
    return model.report(placement.pmu, beta_min=beta_min)


def critical_check(placement: Placement, beta_min, mats, sigmas=Sigmas(), v_prior=None, patterns=None):
    """Per pattern: does ``lambda_min`` stay at or above ``beta_min``?"""
    if beta_min <= 0:
        raise ValueError("beta_min must be positive")
    model = GainModel.from_placement(mats, placement, sigmas, v_prior)
    return [bool(x) for x in model.critical(placement.pmu, beta_min, patterns)]
