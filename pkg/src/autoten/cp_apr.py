"""Nonnegative PARAFAC under KL-divergence (Poisson) loss.

Alternating majorization-minimization with multiplicative inner updates:
each mode is improved a few multiplicative steps while the other factors
stay fixed, which never decreases the Poisson log-likelihood. Column
scales live in a separate weights vector so that the implicit update
denominator (the Khatri-Rao column sums) is exactly one.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import khatri_rao

from .cp_nmu import SolverConfig, _uniform_open
from .tensor import FactorSet, SparseTensor3

logger = logging.getLogger("autoten.cp_apr")

_EPS_DIV = 1e-10
_EPS_LOG = 1e-16
_MAX_INNER = 10

# Dense-unfolding fast path: worthwhile once the tensor is mostly stored
# and small enough to hold three unfoldings.
_DENSE_MIN_FILL = 0.2
_DENSE_CELL_LIMIT = 1 << 24


def poisson_loglikelihood(t: SparseTensor3, fs: FactorSet) -> float:
    """Sum over all cells of x*log(m) - m, with 0*log(0) = 0.

    The linear term collapses to a product of factor column sums, so only
    stored nonzeros are visited.
    """
    if fs.shape != t.dims:
        raise ValueError(f"factor shapes {fs.shape} do not match tensor dims {t.dims}")
    col_sums = fs.weights * fs.a.sum(0) * fs.b.sum(0) * fs.c.sum(0)
    total_model = float(col_sums.sum())
    pos = t.vals > 0
    if not np.any(pos):
        return -total_model
    subs = t.subs[pos]
    m = (fs.a[subs[:, 0]] * fs.b[subs[:, 1]] * fs.c[subs[:, 2]]) @ fs.weights
    return float(np.dot(t.vals[pos], np.log(np.maximum(m, _EPS_LOG)))) - total_model


def _ratio(vals: np.ndarray, model: np.ndarray) -> np.ndarray:
    # 0/0 -> 0; positive counts against a vanished model get a large push.
    out = vals / np.maximum(model, _EPS_DIV)
    out[vals == 0.0] = 0.0
    return out


class _SparseKernel:
    """Per-mode Pi/Phi products touching only stored nonzeros."""

    def __init__(self, t: SparseTensor3):
        self.subs = t.subs
        self.vals = t.vals
        self.dims = t.dims

    def pi(self, mats, mode):
        o1, o2 = [m for m in (0, 1, 2) if m != mode]
        return mats[o1][self.subs[:, o1]] * mats[o2][self.subs[:, o2]]

    def phi(self, b, pi, mode):
        rows = self.subs[:, mode]
        model = np.einsum("nf,nf->n", b[rows], pi)
        w = _ratio(self.vals, model)
        phi = np.empty_like(b)
        for f in range(b.shape[1]):
            phi[:, f] = np.bincount(rows, weights=w * pi[:, f], minlength=b.shape[0])
        return phi


class _DenseKernel:
    """Same products via dense unfoldings and BLAS; used for mostly-dense
    tensors, where gathering per nonzero is slower than matrix products."""

    def __init__(self, t: SparseTensor3):
        self.unfoldings = [t.unfolding(mode).toarray() for mode in (1, 2, 3)]

    def pi(self, mats, mode):
        o1, o2 = [m for m in (0, 1, 2) if m != mode]
        return khatri_rao(mats[o1], mats[o2])

    def phi(self, b, pi, mode):
        x = self.unfoldings[mode]
        model = b @ pi.T
        return _ratio(x, model) @ pi


def _pick_kernel(t: SparseTensor3):
    cells = t.dims[0] * t.dims[1] * t.dims[2]
    if cells <= _DENSE_CELL_LIMIT and t.nnz >= _DENSE_MIN_FILL * cells:
        return _DenseKernel(t)
    return _SparseKernel(t)


def cp_apr_fit(
    t: SparseTensor3, cfg: SolverConfig, *, return_trace: bool = False
) -> FactorSet | tuple[FactorSet, np.ndarray]:
    """Fit a rank-`cfg.rank` Poisson PARAFAC model to nonnegative data.

    Stops when the maximum KKT violation falls below `cfg.tol` or after
    `cfg.max_outer_iters` outer sweeps; at most 10 multiplicative inner
    steps are spent per mode per sweep. Factor columns are rescaled to
    unit 1-norm after each subproblem with the scale kept in the weights
    vector. With `return_trace` the per-sweep log-likelihoods are
    returned as well.
    """
    if t.has_negative():
        raise ValueError("Poisson solver requires nonnegative tensor entries")
    rank = cfg.rank
    if t.nnz == 0 or t.vals.max() == 0.0:
        zero = FactorSet(*(np.zeros((d, rank)) for d in t.dims))
        return (zero, np.zeros(1)) if return_trace else zero

    rng = np.random.default_rng(cfg.seed)
    mats = [_uniform_open(rng, (d, rank)) for d in t.dims]
    weights = np.ones(rank)
    for m in mats:
        cs = m.sum(axis=0)
        m /= cs
        weights *= cs
    kernel = _pick_kernel(t)

    trace = []
    for _ in range(cfg.max_outer_iters):
        converged = True
        for mode in range(3):
            b = mats[mode] * weights
            pi = kernel.pi(mats, mode)
            for _inner in range(_MAX_INNER):
                phi = kernel.phi(b, pi, mode)
                kkt = float(np.abs(np.minimum(b, 1.0 - phi)).max())
                if kkt < cfg.tol:
                    break
                converged = False
                b *= phi
            cs = b.sum(axis=0)
            alive = cs > 0.0
            weights = np.where(alive, cs, 0.0)
            mats[mode] = np.where(alive, b / np.where(alive, cs, 1.0), 0.0)
        trace.append(poisson_loglikelihood(t, FactorSet(*mats, weights=weights)))
        if converged:
            break

    fs = FactorSet(*mats, weights=weights)
    return (fs, np.asarray(trace)) if return_trace else fs
