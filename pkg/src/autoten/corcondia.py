"""Core-consistency diagnostics under Frobenius and KL-divergence losses.

Given factors A, B, C, the diagnostic fits an unconstrained dense core
G to the data with the factors held fixed and reports

    c = 100 * (1 - sum((G - I)^2) / rank)

where I is the superdiagonal tensor of ones. Under Frobenius loss the
core is the least-squares solution, obtained through per-factor SVDs and
Kronecker-structured products; under KL-divergence it is the fixed point
of a multiplicative majorization-minimization iteration. The Kronecker
product of the factors is never materialized on either path.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .kron import (
    kron_mat_vec,
    kron_pinv_apply,
    kron_row_sums,
    kron_select_matvec,
    kron_select_rmatvec,
)
from .tensor import FactorSet, SparseTensor3, SparseVector, vectorize

logger = logging.getLogger("autoten.corcondia")

_EPS_MODEL = 1e-16
KL_TOL = 1e-6
KL_MAX_ITERS = 250


class Loss(enum.Enum):
    FRO = "fro"
    KL = "kl"


@dataclass(frozen=True)
class DiagnosticResult:
    """Diagnostic value plus the fitted core.

    `iterations` is 0 for the closed-form Frobenius path. `trivial`
    marks the rank-1 convention, where the value is pinned to 100
    because a single component always yields a perfect 1x1x1 core.
    """

    c: float
    core: np.ndarray
    loss: Loss
    iterations: int
    trivial: bool = False


@dataclass(frozen=True)
class KlRegressionInfo:
    iterations: int
    objective: np.ndarray  # divergence before the first and after each update


def core_score(core: np.ndarray) -> float:
    rank = core.shape[0]
    diff = core.copy()
    idx = np.arange(rank)
    diff[idx, idx, idx] -= 1.0
    return float(100.0 * (1.0 - float(np.sum(diff * diff)) / rank))


def _check_inputs(t: SparseTensor3, fs: FactorSet) -> FactorSet:
    if fs.shape != t.dims:
        raise ValueError(f"factor shapes {fs.shape} do not match tensor dims {t.dims}")
    return fs.absorb_weights()


def _sparse_cheaper(nnz: int, cells: int, rank: int) -> bool:
    # Support-restricted products cost O(nnz * rank^3) per pass versus
    # O(cells * rank) for the dense reshape-multiply scheme.
    return nnz * rank * rank <= 3 * cells


def corcondia_fro(t: SparseTensor3, fs: FactorSet) -> DiagnosticResult:
    """Core consistency under Frobenius loss.

    The least-squares core solves vec(G) = pinv(A kron B kron C) vec(X),
    applied via one thin SVD per factor. Raises
    :class:`~autoten.kron.SingularFactorError` for rank-deficient factors.
    """
    fs = _check_inputs(t, fs)
    rank = fs.rank
    y = vectorize(t)
    cells = y.n
    x = y if _sparse_cheaper(y.nnz, cells, rank) else y.toarray()
    g = kron_pinv_apply(fs.a, fs.b, fs.c, x)
    core = g.reshape(rank, rank, rank)
    c = 100.0 if rank == 1 else core_score(core)
    return DiagnosticResult(c, core, Loss.FRO, 0, trivial=rank == 1)


def corcondia_kl(
    t: SparseTensor3,
    fs: FactorSet,
    *,
    tol: float = KL_TOL,
    max_iters: int = KL_MAX_ITERS,
) -> DiagnosticResult:
    """Core consistency under KL-divergence loss for nonnegative data."""
    if t.has_negative():
        raise ValueError("KL diagnostic requires nonnegative tensor entries")
    fs = _check_inputs(t, fs)
    rank = fs.rank
    x, info = kl_core_regression(
        vectorize(t), fs.a, fs.b, fs.c, tol=tol, max_iters=max_iters, return_info=True
    )
    core = x.reshape(rank, rank, rank)
    c = 100.0 if rank == 1 else core_score(core)
    return DiagnosticResult(c, core, Loss.KL, info.iterations, trivial=rank == 1)


def generalized_kl(y: np.ndarray, model: np.ndarray) -> float:
    """D_KL(y || model) for nonnegative vectors, with 0*log(0) = 0."""
    y = np.asarray(y, dtype=np.float64).ravel()
    model = np.asarray(model, dtype=np.float64).ravel()
    pos = y > 0
    yp = y[pos]
    mp = np.maximum(model[pos], _EPS_MODEL)
    return float(np.sum(yp * np.log(yp / mp)) - yp.sum() + model.sum())


def _support_of(y):
    if isinstance(y, SparseVector):
        keep = y.vals != 0.0
        return y.n, y.idx[keep], y.vals[keep]
    arr = np.asarray(y, dtype=np.float64).ravel()
    idx = np.nonzero(arr)[0]
    return arr.shape[0], idx, arr[idx]


def kl_core_regression(
    y,
    a: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    *,
    tol: float = KL_TOL,
    max_iters: int = KL_MAX_ITERS,
    init: str = "ones",
    seed: int | None = None,
    return_info: bool = False,
):
    """Approximately minimize D_KL(y || (A kron B kron C) x) over x >= 0.

    Multiplicative majorization-minimization: with yhat the current
    model, each step takes

        x <- x * KronMatVec({A^T, B^T, C^T}, y / yhat) / s

    where s holds the Kronecker column sums, computed factor-wise. Every
    step is normalized by s so the iteration is the standard convergent
    MM update; the divergence never increases. Stops when the relative
    change of the divergence drops below `tol` or after `max_iters`
    updates.

    `y` may be dense or a :class:`SparseVector`. `init` is "ones"
    (deterministic, default) or "random" with `seed`.
    """
    mats = [np.asarray(m, dtype=np.float64) for m in (a, b, c)]
    n_out = int(np.prod([m.shape[0] for m in mats]))
    n_core = int(np.prod([m.shape[1] for m in mats]))
    cells, sup_idx, sup_vals = _support_of(y)
    if cells != n_out:
        raise ValueError(f"y has length {cells}, factors produce {n_out}")
    if sup_vals.size and sup_vals.min() < 0:
        raise ValueError("KL regression requires nonnegative y")

    def done(x, iters, trace):
        if return_info:
            return x, KlRegressionInfo(iters, np.asarray(trace))
        return x

    if sup_vals.size == 0:
        return done(np.zeros(n_core), 0, [0.0])

    s = kron_row_sums(mats)
    total_y = float(sup_vals.sum())
    total_s = float(s.sum())
    if total_s <= 0.0:
        return done(np.zeros(n_core), 0, [np.inf])
    if init == "ones":
        x = np.full(n_core, total_y / total_s)
    elif init == "random":
        r = 1.0 - np.random.default_rng(seed).random(n_core)
        x = r * (total_y / float(s @ r))
    else:
        raise ValueError(f"unknown init {init!r}")
    live = s > 0.0
    x[~live] = 0.0

    use_sparse = _sparse_cheaper(sup_vals.size, cells, max(m.shape[1] for m in mats))
    if use_sparse:
        shape = tuple(m.shape[0] for m in mats)
        subs = np.stack(np.unravel_index(sup_idx, shape), axis=1)

        def model_at_support(x):
            return kron_select_matvec(mats, subs, x)

        def push_back(z_vals):
            return kron_select_rmatvec(mats, subs, z_vals)

    else:

        def model_at_support(x):
            return kron_mat_vec(mats, x)[sup_idx]

        def push_back(z_vals):
            z = np.zeros(cells)
            z[sup_idx] = z_vals
            return kron_mat_vec([m.T for m in mats], z)

    def objective(yhat_sup, x):
        mp = np.maximum(yhat_sup, _EPS_MODEL)
        return float(np.sum(sup_vals * np.log(sup_vals / mp)) - total_y + float(s @ x))

    yhat = model_at_support(x)
    obj_prev = objective(yhat, x)
    trace = [obj_prev]
    iters = 0
    for _ in range(max_iters):
        z1 = sup_vals / np.maximum(yhat, _EPS_MODEL)
        z2 = push_back(z1)
        x = np.where(live, x * z2 / np.where(live, s, 1.0), 0.0)
        yhat = model_at_support(x)
        obj = objective(yhat, x)
        iters += 1
        trace.append(obj)
        if abs(obj_prev - obj) <= tol * max(1.0, abs(obj_prev)):
            break
        obj_prev = obj
    return done(x, iters, trace)
