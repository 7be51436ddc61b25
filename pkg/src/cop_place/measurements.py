"""Measurement functions, Jacobian, selection masks and synthetic data.

The full measurement ensemble has ``2M = 2(2N + 4L)`` real entries laid out
as four blocks::

    z = [ voltages (2N) | currents (4L) | injections (2N) | flows (4L) ]

Voltages are ``[Re V; Im V]``; currents are ``[I_nm...; J_nm...]`` over
``grid.directed_lines``; injections ``[P_n...; Q_n...]``; flows
``[P_nm...; Q_nm...]`` over ``grid.directed_lines``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import ConstantMatrixSet, Grid

__all__ = [
    "Sigmas",
    "Placement",
    "MeasurementEnsemble",
    "block_slices",
    "flat_state",
    "random_true_state",
    "eval_f",
    "eval_jacobian",
    "selection_mask",
    "noise_std",
    "apply_mask",
    "synthesize_measurements",
    "sample_scada",
    "scada_site_count",
]


@dataclass(frozen=True)
class Sigmas:
    """Per-type noise standard deviations (default ``sigma^2 = 1e-4``)."""

    voltage: float = 1e-2
    current: float = 1e-2
    injection: float = 1e-2
    flow: float = 1e-2

    def __post_init__(self):
        for name in ("voltage", "current", "injection", "flow"):
            if not getattr(self, name) > 0:
                raise ValueError(f"sigma for {name} must be positive")

    @classmethod
    def uniform(cls, sigma):
        return cls(sigma, sigma, sigma, sigma)


def _binary(x, size, what):
    a = np.asarray(x)
    if a.shape != (size,):
        raise ValueError(f"{what} must have shape ({size},), got {a.shape}")
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{what} entries must be 0 or 1")
    return a.astype(np.int8)


@dataclass(frozen=True, eq=False)
class Placement:
    """PMU vector plus the fixed SCADA injection and flow masks.

    ``flows`` is indexed by ``grid.directed_lines`` (a flow on ``{n, m}``
    measured at bus ``n``).
    """

    pmu: np.ndarray
    injections: np.ndarray
    flows: np.ndarray

    @classmethod
    def build(cls, grid: Grid, pmu=None, injections=None, flows=None) -> "Placement":
        N, D = grid.n_buses, 2 * grid.n_lines
        pmu = np.zeros(N) if pmu is None else pmu
        injections = np.zeros(N) if injections is None else injections
        flows = np.zeros(D) if flows is None else flows
        flows = np.asarray(flows)
        if flows.ndim == 2:
            flows = flows_from_matrix(grid, flows)
        return cls(
            _binary(pmu, N, "pmu"),
            _binary(injections, N, "injections"),
            _binary(flows, D, "flows"),
        )

    def with_pmu(self, pmu) -> "Placement":
        return Placement(_binary(pmu, self.pmu.size, "pmu"), self.injections, self.flows)

    @property
    def n_pmu(self) -> int:
        return int(self.pmu.sum())

    @property
    def n_scada_sites(self) -> int:
        return int(self.injections.sum() + self.flows.sum())

    def flows_matrix(self, grid: Grid) -> np.ndarray:
        F = np.zeros((grid.n_buses, grid.n_buses), dtype=np.int8)
        for k, (n, m) in enumerate(grid.directed_lines):
            F[n, m] = self.flows[k]
        return F

    def to_dict(self) -> dict:
        return {
            "pmu": self.pmu.tolist(),
            "injections": self.injections.tolist(),
            "flows": self.flows.tolist(),
        }


def flows_from_matrix(grid: Grid, F) -> np.ndarray:
    F = np.asarray(F)
    if F.shape != (grid.n_buses, grid.n_buses):
        raise ValueError("flow matrix must be N x N")
    out = np.array([F[n, m] for n, m in grid.directed_lines], dtype=np.int8)
    mask = np.zeros_like(F, dtype=bool)
    for n, m in grid.directed_lines:
        mask[n, m] = True
    if np.any(F[~mask]):
        raise ValueError("flow matrix has entries off the existing directed lines")
    return out


def block_slices(grid: Grid) -> dict[str, slice]:
    N, L = grid.n_buses, grid.n_lines
    sizes = [("voltage", 2 * N), ("current", 4 * L), ("injection", 2 * N), ("flow", 4 * L)]
    out, start = {}, 0
    for name, size in sizes:
        out[name] = slice(start, start + size)
        start += size
    return out


def flat_state(n_buses: int) -> np.ndarray:
    return np.concatenate([np.ones(n_buses), np.zeros(n_buses)])


def random_true_state(n_buses, rng, magnitude=0.05, phase=0.1) -> np.ndarray:
    """Flat profile with uniform +-5% magnitude and +-0.1 rad phase perturbations."""
    rng = np.random.default_rng(rng)
    mag = 1.0 + rng.uniform(-magnitude, magnitude, n_buses)
    ang = rng.uniform(-phase, phase, n_buses)
    return np.concatenate([mag * np.cos(ang), mag * np.sin(ang)])


def _check_state(v, mats):
    v = np.asarray(v, dtype=float)
    if v.shape != (mats.dim,):
        raise ValueError(f"state must have length {mats.dim}, got shape {v.shape}")
    return v


def _quadratic_rows(v, mats):
    K = len(mats.quadratic_forms)
    return (mats.stacked_forms @ v).reshape(K, mats.dim)


def eval_f(v, mats: ConstantMatrixSet) -> np.ndarray:
    """Noise-free measurement ensemble ``f(v)`` of length ``2M``."""
    v = _check_state(v, mats)
    I_rows, J_rows = mats.current_rows
    rows = _quadratic_rows(v, mats)
    return np.concatenate([v, I_rows @ v, J_rows @ v, 0.5 * rows @ v])


def eval_jacobian(v, mats: ConstantMatrixSet) -> np.ndarray:
    """Dense ``2M x 2N`` Jacobian of :func:`eval_f`."""
    v = _check_state(v, mats)
    I_rows, J_rows = mats.current_rows
    return np.vstack([np.eye(mats.dim), I_rows.toarray(), J_rows.toarray(), _quadratic_rows(v, mats)])


def selection_mask(placement: Placement, grid: Grid) -> np.ndarray:
    """Boolean diagonal of ``J_A`` (length ``2M``).

    A PMU at bus ``n`` selects its voltage phasor and every current measured at
    ``n``.
    """
    pmu = placement.pmu.astype(bool)
    from_bus = np.array([n for n, _ in grid.directed_lines], dtype=int)
    cur = pmu[from_bus] if from_bus.size else np.zeros(0, dtype=bool)
    return np.concatenate(
        [
            np.tile(pmu, 2),
            np.tile(cur, 2),
            np.tile(placement.injections.astype(bool), 2),
            np.tile(placement.flows.astype(bool), 2),
        ]
    )


def noise_std(grid: Grid, sigmas: Sigmas) -> np.ndarray:
    """Square root of the diagonal of ``R``."""
    N, L = grid.n_buses, grid.n_lines
    return np.concatenate(
        [
            np.full(2 * N, sigmas.voltage),
            np.full(4 * L, sigmas.current),
            np.full(2 * N, sigmas.injection),
            np.full(4 * L, sigmas.flow),
        ]
    )


def apply_mask(x, mask, std):
    """``R^{-1/2} J_A x`` for a vector or a row-stacked matrix.

    Unselected rows are kept as structural zeros.
    """
    x = np.asarray(x, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    std = np.broadcast_to(np.asarray(std, dtype=float), mask.shape)
    if x.shape[0] != mask.shape[0]:
        raise ValueError(f"dimension mismatch: {x.shape[0]} rows vs mask of {mask.shape[0]}")
    w = np.where(mask, 1.0 / std, 0.0)
    return x * (w if x.ndim == 1 else w[:, None])


@dataclass(frozen=True, eq=False)
class MeasurementEnsemble:
    """Full ensemble ``z`` with its noise standard deviations."""

    z: np.ndarray
    std: np.ndarray
    grid: Grid = field(repr=False)

    @property
    def covariance(self) -> np.ndarray:
        return self.std**2

    def to_csv(self, mask=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(["index", "block", "quantity", "bus", "to_bus", "value", "sigma", "selected"])
        for row in _describe_rows(self.grid):
            i = row[0]
            sel = "" if mask is None else int(bool(mask[i]))
            writer.writerow(list(row) + [repr(float(self.z[i])), repr(float(self.std[i])), sel])
        return buf.getvalue()


def _describe_rows(grid):
    N = grid.n_buses
    ids = grid.bus_ids
    i = 0
    for q in ("ReV", "ImV"):
        for n in range(N):
            yield i, "voltage", q, ids[n], ""
            i += 1
    for q in ("I", "J"):
        for n, m in grid.directed_lines:
            yield i, "current", q, ids[n], ids[m]
            i += 1
    for q in ("P", "Q"):
        for n in range(N):
            yield i, "injection", q, ids[n], ""
            i += 1
    for q in ("P", "Q"):
        for n, m in grid.directed_lines:
            yield i, "flow", q, ids[n], ids[m]
            i += 1


def synthesize_measurements(v_true, mats: ConstantMatrixSet, sigmas: Sigmas = Sigmas(), seed=None):
    """``z = f(v_true) + r`` with ``r ~ N(0, R)``."""
    rng = np.random.default_rng(seed)
    std = noise_std(mats.grid, sigmas)
    z = eval_f(v_true, mats) + std * rng.standard_normal(std.size)
    return MeasurementEnsemble(z=z, std=std, grid=mats.grid)


def scada_site_count(grid: Grid, fraction: float) -> dict:
    """Both counting conventions for a SCADA fraction.

    ``sites`` is ``ceil(fraction * (2N + 4L))`` complex P/Q sites (capped at the
    ``N + 2L`` available); ``scalars`` is ``fraction * (4N + 8L)``.
    """
    N, L = grid.n_buses, grid.n_lines
    sites = min(math.ceil(fraction * (2 * N + 4 * L) - 1e-12), N + 2 * L)
    return {"sites": int(sites), "scalars": fraction * (4 * N + 8 * L), "available_sites": N + 2 * L}


def sample_scada(grid: Grid, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw SCADA injection/flow sites uniformly without replacement."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    rng = np.random.default_rng(rng)
    N, D = grid.n_buses, 2 * grid.n_lines
    k = scada_site_count(grid, fraction)["sites"]
    chosen = rng.choice(N + D, size=k, replace=False)
    sel = np.zeros(N + D, dtype=np.int8)
    sel[chosen] = 1
    return sel[:N], sel[N:]
