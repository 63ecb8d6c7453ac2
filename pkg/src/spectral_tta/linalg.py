"""Dense float64 linear algebra primitives.

Everything here operates on plain 2-D ``numpy`` arrays of float64 (the
"matrix" carrier used throughout the package). The SVD is a one-sided
Jacobi implementation: slow for big matrices but simple, accurate, and
fully deterministic thanks to a fixed sign convention.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, NumericalFailureError

# Jacobi sweep budget and the off-diagonal threshold that counts as
# "columns are orthogonal".
MAX_SWEEPS = 100
OFFDIAG_TOL = 1e-12


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``a = u @ diag(s) @ vt`` with r = min(rows, cols) factors."""

    u: np.ndarray   # (n, r), orthonormal columns
    s: np.ndarray   # (r,), non-negative, non-increasing
    vt: np.ndarray  # (r, m), orthonormal rows


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and convert ``a`` to a finite 2-D float64 array."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ContractViolationError(f"{name} must be 2-D, got ndim={a.ndim}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ContractViolationError(f"{name} must be non-empty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolationError(f"{name} contains non-finite entries")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ContractViolationError(
            f"matmul shape mismatch: {a.shape} @ {b.shape}"
        )
    return a @ b


def mean_center(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Subtract the column means; returns (centered, mean)."""
    a = as_matrix(a)
    mean = a.mean(axis=0)
    return a - mean, mean


def _jacobi_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonalize the rows of ``x`` (m x n, m <= n) by Jacobi rotations.

    Returns (x_rotated, rot) where ``x_rotated = rot @ x`` has mutually
    orthogonal rows and ``rot`` is orthogonal (m x m).
    """
    m = x.shape[0]
    x = x.copy()
    rot = np.eye(m)
    for _ in range(MAX_SWEEPS):
        off = 0.0
        for i in range(m - 1):
            for j in range(i + 1, m):
                ri = x[i]
                rj = x[j]
                aii = ri @ ri
                ajj = rj @ rj
                aij = ri @ rj
                if aii == 0.0 or ajj == 0.0:
                    continue
                rel = abs(aij) / np.sqrt(aii * ajj)
                if rel > off:
                    off = rel
                if rel <= OFFDIAG_TOL:
                    continue
                zeta = (ajj - aii) / (2.0 * aij)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                if zeta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                ri = ri.copy()
                x[i] = c * ri - s * rj
                x[j] = s * ri + c * rj
                gi = rot[i].copy()
                gj = rot[j].copy()
                rot[i] = c * gi - s * gj
                rot[j] = s * gi + c * gj
        if off <= OFFDIAG_TOL:
            return x, rot
    raise NumericalFailureError(
        f"Jacobi SVD did not converge in {MAX_SWEEPS} sweeps "
        f"(off-diagonal residual {off:.3e})",
        residual=float(off),
    )


def _complete_columns(u: np.ndarray, k: int) -> np.ndarray:
    """Fill columns k.. of ``u`` with an orthonormal completion.

    Only needed for rank-deficient inputs, where some singular values are
    zero and the corresponding left vectors are not determined by the data.
    Uses Gram-Schmidt against the already-filled columns, seeding from
    canonical basis vectors, so the result is deterministic.
    """
    n, r = u.shape
    col = k
    for e in range(n):
        if col == r:
            break
        v = np.zeros(n)
        v[e] = 1.0
        # two passes of Gram-Schmidt for stability
        for _ in range(2):
            v -= u[:, :col] @ (u[:, :col].T @ v)
        norm = np.sqrt(v @ v)
        if norm > 1e-8:
            u[:, col] = v / norm
            col += 1
    return u


def _svd_tall(a: np.ndarray) -> SvdResult:
    """Thin SVD of an n x m matrix with n >= m."""
    n, m = a.shape
    # work on rows of a.T so every inner update touches contiguous memory
    xt, rot = _jacobi_rows(a.T)
    # a @ rot.T has orthogonal columns: a = (xt.T) @ rot, xt rows = scaled V? no:
    # xt = rot @ a.T  =>  a = xt.T @ rot  with xt.T having orthogonal columns.
    norms = np.sqrt(np.einsum("ij,ij->i", xt, xt))
    order = np.argsort(-norms, kind="stable")
    s = norms[order]
    u = np.zeros((n, m))
    nonzero = 0
    for k, idx in enumerate(order):
        if s[k] > 0.0:
            u[:, k] = xt[idx] / s[k]
            nonzero = k + 1
    vt = rot[order]
    if nonzero < m:
        u = _complete_columns(u, nonzero)
    return SvdResult(u=u, s=s, vt=vt)


def svd(a: np.ndarray) -> SvdResult:
    """Deterministic thin SVD by one-sided Jacobi.

    Singular values are sorted descending. Each right singular vector is
    oriented so its largest-magnitude entry is positive (ties resolved by
    lowest index), which fixes the otherwise arbitrary signs.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n >= m:
        res = _svd_tall(a)
        u, s, vt = res.u, res.s, res.vt
    else:
        res = _svd_tall(a.T)
        u, s, vt = res.vt.T, res.s, res.u.T
    # sign convention on right singular vectors
    u = u.copy()
    vt = vt.copy()
    for i in range(vt.shape[0]):
        k = int(np.argmax(np.abs(vt[i])))
        if vt[i, k] < 0.0:
            vt[i] = -vt[i]
            u[:, i] = -u[:, i]
    return SvdResult(u=u, s=s, vt=vt)
