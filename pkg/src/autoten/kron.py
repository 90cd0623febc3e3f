"""Kronecker-structured kernels that never materialize the product matrix."""

from __future__ import annotations

import numpy as np

from .svd import thin_svd
from .tensor import SparseVector

# Relative singular-value cutoff below which a factor is reported singular.
RANK_TOL = 1e-12

_CHUNK = 4096


class SingularFactorError(np.linalg.LinAlgError):
    """A factor matrix is numerically rank deficient; `mode` is 1-based."""

    def __init__(self, mode: int, ratio: float):
        super().__init__(
            f"factor for mode {mode} is numerically rank deficient "
            f"(relative smallest singular value {ratio:.3e} < {RANK_TOL:.0e})"
        )
        self.mode = mode
        self.ratio = ratio


def _check_mats(mats) -> list[np.ndarray]:
    mats = [np.asarray(m, dtype=np.float64) for m in mats]
    if not mats:
        raise ValueError("at least one matrix required")
    for m in mats:
        if m.ndim != 2:
            raise ValueError(f"expected matrices, got shape {m.shape}")
    return mats


def kron_mat_vec(mats, x: np.ndarray) -> np.ndarray:
    """Evaluate (M1 kron M2 kron ... kron Mn) @ x.

    Works by reshaping x into an n-way array, multiplying one mode at a
    time and permuting back, so only the small operands are ever formed.

    Parameters
    ----------
    mats:
        Ordered matrices M1..Mn.
    x:
        Vector of length prod(cols of Mi); the result has length
        prod(rows of Mi).
    """
    mats = _check_mats(mats)
    x = np.asarray(x, dtype=np.float64).ravel()
    cols = [m.shape[1] for m in mats]
    if x.shape[0] != int(np.prod(cols)):
        raise ValueError(f"x has length {x.shape[0]}, expected {int(np.prod(cols))}")
    t = x.reshape(cols)
    for axis, m in enumerate(mats):
        t = np.moveaxis(np.tensordot(m, t, axes=(1, axis)), 0, axis)
    return t.ravel()


def kron_row_sums(mats) -> np.ndarray:
    """Column-wise sums over the rows of M1 kron ... kron Mn.

    Equals the Kronecker product of the per-matrix column-sum row vectors,
    so the product matrix itself is never formed.
    """
    mats = _check_mats(mats)
    s = np.ones(1)
    for m in mats:
        s = np.kron(s, m.sum(axis=0))
    return s


def kron_select_matvec(mats, subs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Rows `subs` of (M1 kron ... kron Mn) @ x, one per row of subs.

    subs holds per-matrix row indices; only the selected rows are touched,
    costing O(len(subs) * prod(cols)).
    """
    mats = _check_mats(mats)
    cols = [m.shape[1] for m in mats]
    t = np.asarray(x, dtype=np.float64).reshape(cols)
    out = np.einsum("nc,c...->n...", mats[0][subs[:, 0]], t)
    for i, m in enumerate(mats[1:], start=1):
        out = np.einsum("nc,nc...->n...", m[subs[:, i]], out)
    return out


def kron_select_rmatvec(mats, subs: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`kron_select_matvec`: accumulate w[n] times the
    outer product of the selected rows, returning a dense vector of length
    prod(cols). Entries are processed in fixed-size chunks to bound memory.
    """
    mats = _check_mats(mats)
    w = np.asarray(w, dtype=np.float64).ravel()
    cols = [m.shape[1] for m in mats]
    out = np.zeros(cols)
    for start in range(0, w.shape[0], _CHUNK):
        sl = slice(start, start + _CHUNK)
        block = w[sl].reshape(-1, *([1] * len(mats)))
        acc = block
        for i, m in enumerate(mats):
            rows = m[subs[sl, i]]
            shape = [rows.shape[0]] + [1] * len(mats)
            shape[i + 1] = rows.shape[1]
            acc = acc * rows.reshape(shape)
        out += acc.sum(axis=0)
    return out.ravel()


def _factor_svds(mats):
    svds = []
    for mode, m in enumerate(mats, start=1):
        u, s, v = thin_svd(m)
        top = s[0] if s.size else 0.0
        ratio = (s[-1] / top) if top > 0.0 else 0.0
        if top == 0.0 or ratio < RANK_TOL:
            raise SingularFactorError(mode, ratio)
        svds.append((u, s, v))
    return svds


def kron_pinv_apply(a: np.ndarray, b: np.ndarray, c: np.ndarray, x) -> np.ndarray:
    """Apply the pseudoinverse of (a kron b kron c) to x.

    Uses one thin SVD per factor and three structured products; no matrix
    larger than max(rows) x rank is formed. x may be dense or a
    :class:`SparseVector`, in which case the first product touches only
    its nonzeros.

    Raises
    ------
    SingularFactorError
        When any factor's smallest singular value falls below
        ``RANK_TOL`` relative to its largest.
    """
    (ua, sa, va), (ub, sb, vb), (uc, sc, vc) = _factor_svds([a, b, c])
    if isinstance(x, SparseVector):
        rows = x.n // (b.shape[0] * c.shape[0])
        if rows * b.shape[0] * c.shape[0] != x.n:
            raise ValueError("sparse vector length does not match factor rows")
        subs = np.stack(
            np.unravel_index(x.idx, (a.shape[0], b.shape[0], c.shape[0])), axis=1
        )
        y = kron_select_rmatvec([ua, ub, uc], subs, x.vals)
    else:
        y = kron_mat_vec([ua.T, ub.T, uc.T], x)
    y = y / np.kron(np.kron(sa, sb), sc)
    return kron_mat_vec([va, vb, vc], y)
