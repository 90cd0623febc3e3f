"""Thin SVD for small factor matrices via one-sided cyclic Jacobi.

The rotation angles are derived from 2x2 blocks of the implicit Gram
matrix, so the factorization stays accurate for the tiny singular values
that mark a rank-deficient factor; forming the full Gram matrix and
diagonalizing it would square the condition number and bury them.
"""

from __future__ import annotations

import numpy as np

_SWEEP_TOL = 1e-15
_MAX_SWEEPS = 64


def thin_svd(m: np.ndarray, *, tol: float = _SWEEP_TOL) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decompose m (r x c) as u @ diag(s) @ v.T.

    u is r x c with orthonormal nonzero columns, s is descending and
    nonnegative, v is c x c orthogonal. Columns of u belonging to zero
    singular values are zero.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {m.shape}")
    rows, cols = m.shape
    u = m.copy()
    v = np.eye(cols)
    for _ in range(_MAX_SWEEPS):
        off = 0.0
        for p in range(cols - 1):
            for q in range(p + 1, cols):
                upq = float(u[:, p] @ u[:, q])
                if upq == 0.0:
                    continue
                upp = float(u[:, p] @ u[:, p])
                uqq = float(u[:, q] @ u[:, q])
                scale = np.sqrt(upp * uqq)
                rel = abs(upq) / scale if scale > 0.0 else 0.0
                if rel <= tol:
                    continue
                off = max(off, rel)
                tau = (uqq - upp) / (2.0 * upq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                if tau == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for mat in (u, v):
                    colp = mat[:, p].copy()
                    mat[:, p] = c * colp - s * mat[:, q]
                    mat[:, q] = s * colp + c * mat[:, q]
        if off <= tol:
            break
    sigma = np.sqrt(np.einsum("ij,ij->j", u, u))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    u = u[:, order]
    v = v[:, order]
    nonzero = sigma > 0.0
    u[:, nonzero] = u[:, nonzero] / sigma[nonzero]
    u[:, ~nonzero] = 0.0
    return u, sigma, v
