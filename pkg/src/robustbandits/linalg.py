"""Small PSD / least-squares helpers shared across the algorithms.

Everything works on float64 numpy arrays and keeps results symmetric
explicitly; eigendecompositions of nearly-symmetric matrices are the main
source of drift otherwise.
"""

from __future__ import annotations

import numpy as np

# relative eigenvalue cutoff for pseudo-inverses of PSD matrices
PINV_CUTOFF = 1e-10


def sym(M):
    """Symmetrize (average with the transpose)."""
    return 0.5 * (M + M.T)


def min_eig(M) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    return float(np.linalg.eigvalsh(sym(M))[0])


def max_eig(M) -> float:
    return float(np.linalg.eigvalsh(sym(M))[-1])


def psd_pinv(M, cutoff: float = PINV_CUTOFF):
    """Pseudo-inverse of a PSD matrix.

    Eigenvalues below cutoff * lambda_max are treated as zero.  Safe on the
    zero matrix (returns zero).
    """
    w, V = np.linalg.eigh(sym(M))
    lam_max = w[-1] if w.size else 0.0
    if lam_max <= 0.0:
        return np.zeros_like(M)
    inv_w = np.where(w > cutoff * lam_max, 1.0 / np.maximum(w, cutoff * lam_max), 0.0)
    return sym((V * inv_w) @ V.T)


def psd_sqrt(M, cutoff: float = PINV_CUTOFF):
    """Symmetric square root of a PSD matrix (negative dust clipped to 0)."""
    w, V = np.linalg.eigh(sym(M))
    w = np.clip(w, 0.0, None)
    return sym((V * np.sqrt(w)) @ V.T)


def psd_inv_sqrt(M, cutoff: float = PINV_CUTOFF):
    """Pseudo-inverse square root of a PSD matrix."""
    w, V = np.linalg.eigh(sym(M))
    lam_max = w[-1] if w.size else 0.0
    if lam_max <= 0.0:
        return np.zeros_like(M)
    inv_s = np.where(w > cutoff * lam_max, 1.0 / np.sqrt(np.maximum(w, cutoff * lam_max)), 0.0)
    return sym((V * inv_s) @ V.T)


def dominates(A, B, tol: float = 1e-8) -> bool:
    """True when A - B is PSD up to -tol on the smallest eigenvalue."""
    return min_eig(np.asarray(A) - np.asarray(B)) >= -tol


def span_basis(vectors, tol: float = 1e-10):
    """Orthonormal basis (columns) for the row span of `vectors` via SVD.

    :param vectors: (n, d) array.
    :returns: (d, r) array whose columns span the same subspace.
    """
    A = np.asarray(vectors, dtype=float)
    if A.size == 0:
        return np.zeros((A.shape[1] if A.ndim == 2 else 0, 0))
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        return np.zeros((A.shape[1], 0))
    r = int(np.sum(s > tol * s[0]))
    return Vt[:r].T
