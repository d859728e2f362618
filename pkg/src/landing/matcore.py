"""Dense double-precision linear algebra with validated contracts.

All routines take and return plain ``numpy.ndarray`` objects (float64, 2-D,
row-major semantics). Factorizations are LAPACK-backed; on top of that this
module pins down the conventions the rest of the package relies on:
orthonormality tolerances, a sign-canonical thin QR (positive R diagonal, so
retractions are deterministic), ascending eigenvalues, descending singular
values. Inputs are checked for shape and finiteness and violations raise
package errors instead of propagating raw LAPACK behaviour.

Everything here is pure: identical inputs give identical outputs across calls
and threads, with no internal global state.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolationError, NumericalError, SingularityError

__all__ = [
    "as_matrix",
    "matmul",
    "skew_part",
    "sym_part",
    "frobenius_norm",
    "thin_qr",
    "sym_eig",
    "spd_inv_sqrt",
    "thin_svd",
]


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Validate and return ``m`` as a finite float64 2-D array."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ContractViolationError(
            f"{name} must be a 2-D matrix with positive dimensions, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ContractViolationError(f"{name} contains NaN or Inf entries")
    return arr


def _require_square(m: np.ndarray, name: str) -> np.ndarray:
    m = as_matrix(m, name)
    if m.shape[0] != m.shape[1]:
        raise ContractViolationError(f"{name} must be square, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with a fixed summation order.

    Accumulates rank-one terms in index order over the inner dimension, which
    reproduces a naive triple loop bit for bit and never reassociates between
    runs. Intended for contract checks and oracles; large performance-critical
    products elsewhere in the package use BLAS (``@``), which is likewise
    deterministic per platform but orders its sums differently.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ContractViolationError(
            f"inner dimensions do not match: {a.shape} x {b.shape}"
        )
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def skew_part(m) -> np.ndarray:
    """Skew-symmetric part (M - M^T)/2 of a square matrix; exactly antisymmetric."""
    m = _require_square(m, "m")
    return 0.5 * (m - m.T)


def sym_part(m) -> np.ndarray:
    """Symmetric part (M + M^T)/2 of a square matrix; exactly symmetric."""
    m = _require_square(m, "m")
    return 0.5 * (m + m.T)


def frobenius_norm(m) -> float:
    """Frobenius norm of a matrix."""
    return float(np.linalg.norm(as_matrix(m, "m")))


def thin_qr(m, rank_tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR factorization with a sign-canonical upper-triangular factor.

    Parameters
    ----------
    m : (n, p) array, n >= p, full column rank.
    rank_tol : relative threshold on the R diagonal used to detect rank
        deficiency.

    Returns
    -------
    q : (n, p) array with orthonormal columns (``q.T @ q = I`` to 1e-12).
    r : (p, p) upper triangular with strictly positive diagonal, so the
        factorization is unique and deterministic. ``q @ r`` reconstructs
        ``m`` to ``1e-12 * ||m||``.

    Raises
    ------
    SingularityError
        If some column is (numerically) linearly dependent on the previous
        ones; the message names the first offending column.
    """
    m = as_matrix(m, "m")
    n, p = m.shape
    if n < p:
        raise ContractViolationError(f"thin_qr needs n >= p, got shape {m.shape}")
    q, r = np.linalg.qr(m, mode="reduced")
    diag = np.diagonal(r)
    scale = np.linalg.norm(m)
    bad = np.flatnonzero(np.abs(diag) <= rank_tol * scale)
    if scale == 0.0 or bad.size:
        col = int(bad[0]) if bad.size else 0
        raise SingularityError(
            f"matrix is rank deficient: column {col} has |R[{col},{col}]| = "
            f"{0.0 if scale == 0.0 else abs(diag[col]):.3e} <= {rank_tol:g} * ||m||"
        )
    sign = np.where(diag < 0.0, -1.0, 1.0)
    return q * sign, r * sign[:, None]


def sym_eig(s, sym_tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns ``(w, v)`` with eigenvalues ``w`` ascending and eigenvectors as
    columns of ``v`` (``v.T @ v = I`` to 1e-12; ``s @ v = v @ diag(w)`` to
    ``1e-11 * ||s||``). The input must be symmetric to ``sym_tol`` relative; it
    is exactly symmetrized before factorization so the result is well defined.
    """
    s = _require_square(s, "s")
    scale = np.linalg.norm(s)
    if np.linalg.norm(s - s.T) > sym_tol * max(scale, 1e-300):
        raise ContractViolationError(
            f"matrix is not symmetric within {sym_tol:g} relative tolerance"
        )
    try:
        w, v = np.linalg.eigh(0.5 * (s + s.T))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure is rare
        raise NumericalError(f"symmetric eigendecomposition did not converge: {exc}") from exc
    return w, v


def spd_inv_sqrt(s, cond_tol: float = 1e-12) -> np.ndarray:
    """Inverse square root of a symmetric positive definite matrix.

    The result ``R`` is exactly symmetric and satisfies ``R @ s @ R = I`` to
    1e-10. Eigenvalues below ``cond_tol`` times the largest one are rejected.
    """
    w, v = sym_eig(s)
    if w[-1] <= 0.0 or w[0] <= cond_tol * w[-1]:
        raise SingularityError(
            f"matrix is not safely positive definite: smallest eigenvalue "
            f"{w[0]:.6e}, largest {w[-1]:.6e}"
        )
    r = (v / np.sqrt(w)) @ v.T
    return 0.5 * (r + r.T)


def thin_svd(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin singular value decomposition ``m = u @ diag(sigma) @ v.T``.

    Requires ``n >= p``. Returns ``u`` (n, p) and ``v`` (p, p) with orthonormal
    columns to 1e-11 and ``sigma`` nonnegative descending; reconstruction holds
    to ``1e-10 * ||m||``. Zero singular values are allowed.
    """
    m = as_matrix(m, "m")
    n, p = m.shape
    if n < p:
        raise ContractViolationError(f"thin_svd needs n >= p, got shape {m.shape}")
    try:
        u, sigma, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise NumericalError(f"singular value decomposition did not converge: {exc}") from exc
    return u, sigma, vt.T
