"""Nonnegative PARAFAC under Frobenius loss via multiplicative updates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .tensor import FactorSet, SparseTensor3, mttkrp

logger = logging.getLogger("autoten.cp_nmu")

_EPS = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    """Shared configuration for the PARAFAC solvers.

    `tol` is interpreted by each solver: relative fit change for the
    Frobenius solver, maximum KKT violation for the Poisson solver.
    """

    rank: int
    max_outer_iters: int = 500
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")

    def with_seed(self, seed: int) -> "SolverConfig":
        return replace(self, seed=int(seed))


def _uniform_open(rng: np.random.Generator, shape) -> np.ndarray:
    # (0, 1]: multiplicative updates stall on exact zeros.
    return 1.0 - rng.random(shape)


def cp_nmu_fit(
    t: SparseTensor3, cfg: SolverConfig, *, return_trace: bool = False
) -> FactorSet | tuple[FactorSet, np.ndarray]:
    """Fit a rank-`cfg.rank` nonnegative PARAFAC model minimizing the
    Frobenius residual.

    Lee-Seung style updates per mode: X ← X * mttkrp / (X @ gram + eps).
    The residual is non-increasing across outer iterations; iteration
    stops when the relative fit 1 - residual/norm changes by less than
    `cfg.tol` or after `cfg.max_outer_iters` sweeps.

    With `return_trace` the per-iteration residual norms are returned as
    well. Tensors with negative entries are accepted with a warning; the
    update numerator is then clipped at zero to keep the factors
    nonnegative.
    """
    rank = cfg.rank
    i, j, k = t.dims
    if rank > min(i * j, j * k, i * k):
        raise ValueError(f"rank {rank} exceeds min of pairwise dim products for {t.dims}")
    if t.has_negative():
        logger.warning("tensor has negative entries; Frobenius solver clips updates")
    norm_x = t.norm()
    if norm_x == 0.0:
        zero = FactorSet(np.zeros((i, rank)), np.zeros((j, rank)), np.zeros((k, rank)))
        return (zero, np.zeros(0)) if return_trace else zero

    rng = np.random.default_rng(cfg.seed)
    mats = [_uniform_open(rng, (d, rank)) for d in t.dims]
    grams = [m.T @ m for m in mats]
    norm_x2 = norm_x * norm_x
    clip = t.has_negative()

    trace = []
    fit_prev = None
    for _ in range(cfg.max_outer_iters):
        inner_xm = 0.0
        for mode in (1, 2, 3):
            num = mttkrp(t, mats, mode)
            o1, o2 = [m for m in (0, 1, 2) if m != mode - 1]
            denom = mats[mode - 1] @ (grams[o1] * grams[o2]) + _EPS
            mats[mode - 1] *= (np.maximum(num, 0.0) if clip else num) / denom
            grams[mode - 1] = mats[mode - 1].T @ mats[mode - 1]
            if mode == 3:
                # <X, model> for the freshly updated factors: the mode-3
                # mttkrp depends only on modes 1-2, so it is still exact.
                inner_xm = float(np.sum(mats[2] * num))
        norm_m2 = float(np.sum(grams[0] * grams[1] * grams[2]))
        resid = np.sqrt(max(norm_x2 - 2.0 * inner_xm + norm_m2, 0.0))
        trace.append(resid)
        fit = 1.0 - resid / norm_x
        if fit_prev is not None and abs(fit - fit_prev) < cfg.tol:
            break
        fit_prev = fit

    fs = FactorSet(*mats)
    return (fs, np.asarray(trace)) if return_trace else fs
