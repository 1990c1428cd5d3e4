"""Deterministic dense linear-algebra primitives.

Dense matrices are plain float64 ``numpy`` arrays; sparse matrices are
``scipy.sparse`` CSR arrays. Heavy lifting is delegated to LAPACK through
``scipy.linalg`` (Householder ``geqrf``, divide-and-conquer ``gesdd``) and to
``scipy.fft`` for the DCT. Nothing in this module draws random numbers.
"""

import numpy as np
import scipy.fft
import scipy.linalg as la
import scipy.sparse as sp

from .errors import DimensionError, KernelError, SingularCoreError

__all__ = [
    "as_dense",
    "is_sparse",
    "matmul",
    "thin_qr",
    "tri_solve",
    "tri_solve_right",
    "svd",
    "dct2_rows",
    "dct2_cols",
    "idct2_rows",
    "dct2_reference",
    "estimate_norms",
    "spectral_norm_estimate",
    "fro_norm",
]


def is_sparse(A):
    return sp.issparse(A)


def as_dense(A):
    """Return ``A`` as a finite float64 ndarray (2-D)."""
    if sp.issparse(A):
        A = A.toarray()
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def fro_norm(A):
    if sp.issparse(A):
        return float(np.sqrt((A.data**2).sum()))
    return float(np.linalg.norm(A))


def matmul(A, B, transpose_a=False):
    """C = op(A) @ B for dense or CSR ``A`` and dense ``B``."""
    B = np.asarray(B, dtype=np.float64)
    inner = A.shape[0] if transpose_a else A.shape[1]
    if B.shape[0] != inner:
        raise DimensionError(
            f"inner dimensions disagree: op(A) is {'x'.join(map(str, A.shape[::-1] if transpose_a else A.shape))}, "
            f"B is {B.shape[0]}x{B.shape[1] if B.ndim > 1 else 1}"
        )
    if sp.issparse(A):
        out = (A.T @ B) if transpose_a else (A @ B)
        return np.asarray(out)
    A = np.asarray(A, dtype=np.float64)
    return A.T @ B if transpose_a else A @ B


def thin_qr(M):
    """Householder thin QR, ``M = Q @ R`` with ``R`` exactly upper triangular."""
    M = np.asarray(M, dtype=np.float64)
    m, n = M.shape
    if m < n:
        raise DimensionError(f"thin_qr needs rows >= cols, got {m}x{n}")
    if n == 0:
        return np.zeros((m, 0)), np.zeros((0, 0))
    Q, R = la.qr(M, mode="economic", check_finite=False)
    return Q, np.triu(R)


def _check_triangular(T):
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise DimensionError(f"triangular factor must be square, got {T.shape}")
    if np.any(np.diag(T) == 0.0):
        raise SingularCoreError("triangular factor has an exact zero on its diagonal")


def tri_solve(T, B, lower=False, trans=False):
    """Solve ``op(T) X = B`` for triangular ``T``."""
    T = np.asarray(T, dtype=np.float64)
    _check_triangular(T)
    B = np.asarray(B, dtype=np.float64)
    if B.shape[0] != T.shape[0]:
        raise DimensionError(f"cannot solve {T.shape} system with {B.shape[0]} rows")
    return la.solve_triangular(T, B, lower=lower, trans="T" if trans else "N", check_finite=False)


def tri_solve_right(B, R, lower=False):
    """Return ``X`` with ``X @ R = B`` (i.e. ``B R^{-1}``) by substitution."""
    B = np.asarray(B, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if B.shape[1] != R.shape[0]:
        raise DimensionError(f"B has {B.shape[1]} columns but R is {R.shape}")
    # X R = B  <=>  R^T X^T = B^T
    return tri_solve(R, B.T, lower=lower, trans=True).T


def svd(M):
    """Thin SVD ``M = U diag(s) Vt`` with ``s`` non-increasing.

    Returns ``(U, s, V)`` -- note ``V``, not ``V^T``.
    """
    M = np.asarray(M, dtype=np.float64)
    if not np.all(np.isfinite(M)):
        raise ValueError("svd input has non-finite entries")
    if min(M.shape) == 0:
        m, n = M.shape
        return np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0))
    try:
        U, s, Vt = la.svd(M, full_matrices=False, check_finite=False, lapack_driver="gesdd")
    except la.LinAlgError:
        try:
            U, s, Vt = la.svd(M, full_matrices=False, check_finite=False, lapack_driver="gesvd")
        except la.LinAlgError as exc:
            raise KernelError(f"SVD did not converge for a {M.shape} matrix") from exc
    return U, s, Vt.T


def dct2_rows(M):
    """Orthonormal DCT-II applied along each row (axis 1)."""
    return scipy.fft.dct(np.asarray(M, dtype=np.float64), type=2, norm="ortho", axis=1)


def dct2_cols(M):
    """Orthonormal DCT-II applied down each column (axis 0)."""
    return scipy.fft.dct(np.asarray(M, dtype=np.float64), type=2, norm="ortho", axis=0)


def idct2_rows(M):
    return scipy.fft.idct(np.asarray(M, dtype=np.float64), type=2, norm="ortho", axis=1)


def dct2_reference(M):
    """O(n^2) direct-sum orthonormal DCT-II along rows, for cross-checking."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    n = M.shape[1]
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    C = np.cos(np.pi * (2 * j + 1) * k / (2 * n))
    C[0, :] *= np.sqrt(1.0 / n)
    C[1:, :] *= np.sqrt(2.0 / n)
    # y_k = sum_j m_j C[k, j]
    return M @ C.T


def _start_vector(n):
    # Fixed, dense, non-symmetric pattern; avoids being orthogonal to
    # structured singular vectors such as e_1 or the all-ones vector.
    i = np.arange(1, n + 1, dtype=np.float64)
    z = np.sin(1.7 * i) + 0.5 * np.cos(0.3 * i * i) + 1.0 / i
    return z / np.linalg.norm(z)


def estimate_norms(R, iters=10):
    """Power-method estimates of ``||R||_2`` and ``||R^{-1}||_2``.

    Each step costs O(r^2). Both estimates are norms of ``R z`` (resp.
    ``R^{-1} z``) for unit ``z``, so they never exceed the true values. An
    overflowing or exactly singular solve yields ``normRinv = inf``.
    """
    if iters < 2:
        raise ValueError("estimate_norms needs iters >= 2")
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise DimensionError(f"R must be square, got {R.shape}")
    n = R.shape[0]
    if n == 0:
        return {"normR": 0.0, "normRinv": 0.0}

    z = _start_vector(n)
    normR = 0.0
    for _ in range(iters):
        w = R @ z
        normR = max(normR, float(np.linalg.norm(w)))
        z = R.T @ w
        nz = np.linalg.norm(z)
        if nz == 0.0:
            break
        z /= nz

    if np.any(np.diag(R) == 0.0):
        return {"normR": normR, "normRinv": float("inf")}
    z = _start_vector(n)
    normRinv = 0.0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(iters):
            w = la.solve_triangular(R, z, lower=False, check_finite=False)
            nw = float(np.linalg.norm(w))
            if not np.isfinite(nw):
                return {"normR": normR, "normRinv": float("inf")}
            normRinv = max(normRinv, nw)
            z = la.solve_triangular(R, w, lower=False, trans="T", check_finite=False)
            nz = np.linalg.norm(z)
            if not np.isfinite(nz):
                # the next estimate would exceed the overflow threshold
                return {"normR": normR, "normRinv": float("inf")}
            z /= nz
    return {"normR": normR, "normRinv": normRinv}


def spectral_norm_estimate(M, iters=10):
    """Power-method lower estimate of ``||M||_2`` for a general small matrix."""
    M = np.asarray(M, dtype=np.float64)
    if M.size == 0:
        return 0.0
    z = _start_vector(M.shape[1])
    est = 0.0
    for _ in range(iters):
        w = M @ z
        est = max(est, float(np.linalg.norm(w)))
        z = M.T @ w
        nz = np.linalg.norm(z)
        if nz == 0.0:
            break
        z /= nz
    return est
