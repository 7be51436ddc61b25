"""Dense symmetric linear algebra used across the package.

``eig_sym`` defaults to LAPACK (``numpy.linalg.eigh``); ``method="qr"`` runs
the in-repo Householder tridiagonalisation followed by implicit
Wilkinson-shift QR sweeps, which serves as an independent cross-check.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg as sla

__all__ = [
    "EIG_RTOL",
    "NotSymmetricError",
    "IndefiniteMatrixError",
    "check_symmetric",
    "eig_sym",
    "eigvals_sym",
    "lambda_min",
    "lambda_max",
    "clamp_spectrum",
    "sqrt_psd",
    "project_psd",
    "tridiagonalize",
    "tridiagonal_qr",
    "spd_solve",
]

# eigenvalues below EIG_RTOL * lambda_max count as zero
EIG_RTOL = 1e-9


class NotSymmetricError(ValueError):
    pass


class IndefiniteMatrixError(ValueError):
    pass


def check_symmetric(A, rtol=1e-12):
    """Validate a square, finite, symmetric matrix and return it symmetrised."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NotSymmetricError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    scale = np.abs(A).max() if A.size else 0.0
    if scale > 0 and np.abs(A - A.T).max() > rtol * scale:
        raise NotSymmetricError("matrix is not symmetric")
    return 0.5 * (A + A.T)


def eig_sym(A, method="lapack"):
    """Eigenvalues in ascending order and orthonormal eigenvectors."""
    A = check_symmetric(A)
    if method == "lapack":
        return np.linalg.eigh(A)
    if method == "qr":
        # unit scale keeps the reflector norms clear of underflow
        scale = np.abs(A).max() if A.size else 0.0
        scale = scale if scale > 0 else 1.0
        d, e, Q = tridiagonalize(A / scale)
        w, Z = tridiagonal_qr(d, e)
        w = w * scale
        V = Q @ Z
        order = np.argsort(w, kind="stable")
        return w[order], V[:, order]
    raise ValueError(f"unknown method {method!r}")


def eigvals_sym(A):
    return np.linalg.eigvalsh(check_symmetric(A))


def clamp_spectrum(w, rtol=EIG_RTOL):
    """Zero out eigenvalues that are numerical dust relative to the largest one."""
    w = np.array(w, dtype=float)
    top = np.abs(w).max(axis=-1, keepdims=True) if w.size else 0.0
    w[np.abs(w) <= rtol * top] = 0.0
    return w


def lambda_min(A, rtol=EIG_RTOL):
    """Smallest eigenvalue, with values under ``rtol * lambda_max`` reported as 0."""
    A = np.asarray(A, dtype=float)
    if A.shape[-1] == 0:
        return np.zeros(A.shape[:-2]) if A.ndim > 2 else 0.0
    w = np.linalg.eigvalsh(A)
    lo, hi = w[..., 0], np.abs(w).max(axis=-1)
    return np.where(np.abs(lo) <= rtol * hi, 0.0, lo)


def lambda_max(A, rtol=EIG_RTOL, scale=None):
    """Largest eigenvalue; reported as 0 when below ``rtol * scale``."""
    A = np.asarray(A, dtype=float)
    if A.shape[-1] == 0:
        return np.zeros(A.shape[:-2]) if A.ndim > 2 else 0.0
    hi = np.linalg.eigvalsh(A)[..., -1]
    if scale is not None:
        hi = np.where(np.abs(hi) <= rtol * scale, 0.0, hi)
    return hi


def sqrt_psd(A, rtol=EIG_RTOL):
    """Symmetric PSD square root; small negative eigenvalues are clamped to 0."""
    w, V = eig_sym(A)
    top = max(np.abs(w).max(), 0.0) if w.size else 0.0
    if w.size and w[0] < -rtol * top:
        raise IndefiniteMatrixError(f"matrix is indefinite (lambda_min={w[0]:.3e})")
    w = np.clip(w, 0.0, None)
    X = (V * np.sqrt(w)) @ V.T
    return 0.5 * (X + X.T)


def project_psd(A):
    """Nearest PSD matrix in Frobenius norm."""
    w, V = eig_sym(A)
    X = (V * np.clip(w, 0.0, None)) @ V.T
    return 0.5 * (X + X.T)


def spd_solve(A, b, ridge=0.0):
    """Solve ``A x = b`` for SPD ``A`` by Cholesky.

    Returns ``(x, rcond)`` with ``rcond`` the reciprocal 1-norm condition
    estimate.  Raises ``numpy.linalg.LinAlgError`` when ``A + ridge*I`` is not
    numerically positive definite.
    """
    A = np.asarray(A, dtype=float)
    if ridge:
        A = A + ridge * np.eye(A.shape[0])
    try:
        c, lower = sla.cho_factor(A, lower=True, check_finite=True)
    except sla.LinAlgError as exc:
        raise np.linalg.LinAlgError(str(exc)) from None
    x = sla.cho_solve((c, lower), b)
    anorm = np.abs(A).sum(axis=0).max()
    rcond = _chol_rcond(c, anorm)
    return x, rcond


def _chol_rcond(c, anorm):
    if anorm == 0:
        return 0.0
    lapack_pocon = sla.get_lapack_funcs("pocon", (c,))
    rcond, info = lapack_pocon(c, anorm, uplo="L")
    return float(rcond) if info == 0 else 0.0


# ---------------------------------------------------------------------------
# in-repo eigensolver


def _safe_norm(x):
    """2-norm without underflow in the squares."""
    m = np.abs(x).max() if x.size else 0.0
    return 0.0 if m == 0.0 else m * float(np.linalg.norm(x / m))


def tridiagonalize(A):
    """Householder reduction ``A = Q T Q^T`` with ``T`` tridiagonal.

    Returns the diagonal ``d``, the off-diagonal ``e`` and ``Q``.
    """
    T = np.array(A, dtype=float)
    n = T.shape[0]
    Q = np.eye(n)
    for k in range(n - 2):
        x = T[k + 1 :, k]
        alpha = _safe_norm(x)
        if alpha == 0.0:
            continue
        if x[0] > 0:
            alpha = -alpha
        u = x.copy()
        u[0] -= alpha
        unorm = _safe_norm(u)
        if unorm == 0.0:
            continue
        u /= unorm
        # two-sided reflector on the trailing block
        S = T[k + 1 :, k + 1 :]
        p = 2.0 * S @ u
        K = u @ p
        q = p - K * u
        S -= np.outer(u, q) + np.outer(q, u)
        T[k + 1 :, k] = 0.0
        T[k, k + 1 :] = 0.0
        T[k + 1, k] = T[k, k + 1] = alpha
        Q[:, k + 1 :] -= 2.0 * np.outer(Q[:, k + 1 :] @ u, u)
    return np.diag(T).copy(), np.diag(T, 1).copy(), Q


def tridiagonal_qr(d, e, max_sweeps=60):
    """Eigen-decomposition of a symmetric tridiagonal matrix.

    Implicit QR steps with Wilkinson shifts and Givens chasing; returns
    unsorted eigenvalues and the accumulated rotations.
    """
    d = np.array(d, dtype=float)
    e = np.array(e, dtype=float)
    n = d.size
    Z = np.eye(n)
    if n <= 1:
        return d, Z
    eps = np.finfo(float).eps
    tiny = np.finfo(float).tiny
    # work at unit scale so tiny or huge entries neither underflow nor overflow
    scale = max(np.abs(d).max(), np.abs(e).max())
    if scale == 0.0 or not math.isfinite(scale):
        return d, Z
    d /= scale
    e /= scale
    hi = n - 1
    sweeps = 0
    while hi > 0:
        # deflate converged trailing entries
        if abs(e[hi - 1]) <= eps * (abs(d[hi - 1]) + abs(d[hi])) + tiny:
            e[hi - 1] = 0.0
            hi -= 1
            sweeps = 0
            continue
        lo = hi - 1
        while lo > 0 and abs(e[lo - 1]) > eps * (abs(d[lo - 1]) + abs(d[lo])) + tiny:
            lo -= 1
        sweeps += 1
        if sweeps > max_sweeps * n:
            raise np.linalg.LinAlgError("tridiagonal QR failed to converge")
        # Wilkinson shift from the trailing 2x2
        delta = 0.5 * (d[hi - 1] - d[hi])
        b = e[hi - 1]
        sign = 1.0 if delta >= 0 else -1.0
        # b * (b / ...) rather than b**2, which underflows in small blocks
        mu = d[hi] - b * (b / (delta + sign * math.hypot(delta, b)))
        x = d[lo] - mu
        z = e[lo]
        for k in range(lo, hi):
            r = math.hypot(x, z)
            c, s = (1.0, 0.0) if r == 0.0 else (x / r, -z / r)
            if k > lo:
                e[k - 1] = r
            dk, dk1, ek = d[k], d[k + 1], e[k]
            d[k] = c * c * dk - 2 * c * s * ek + s * s * dk1
            d[k + 1] = s * s * dk + 2 * c * s * ek + c * c * dk1
            e[k] = c * s * (dk - dk1) + (c * c - s * s) * ek
            if k < hi - 1:
                x = e[k]
                z = -s * e[k + 1]
                e[k + 1] = c * e[k + 1]
            zk = Z[:, k].copy()
            Z[:, k] = c * zk - s * Z[:, k + 1]
            Z[:, k + 1] = s * zk + c * Z[:, k + 1]
    return d * scale, Z
