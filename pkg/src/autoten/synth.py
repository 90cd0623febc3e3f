"""Synthetic low-rank tensors with integer-valued random factors."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .tensor import FactorSet, SparseTensor3

logger = logging.getLogger("autoten.synth")

_VALUE_HIGH = 5  # integer factor values are drawn from 1..5
_RANK_GUARD = 1e-8
_MAX_REDRAWS = 50


class FactorMode(enum.Enum):
    SPARSE = "sparse"
    DENSE = "dense"


class NoiseKind(enum.Enum):
    GAUSSIAN = "gauss"
    NONE = "none"


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic tensor.

    Sparse mode calibrates per-component factor sparsity so the noiseless
    tensor carries about `target_nnz` nonzeros; dense mode fills the
    factors completely. Gaussian noise (variance `noise_variance`) is
    added to every cell, which may turn entries negative.
    """

    dims: tuple[int, int, int] = (50, 50, 50)
    true_rank: int = 3
    factor_mode: FactorMode = FactorMode.SPARSE
    noise: NoiseKind = NoiseKind.NONE
    seed: int = 0
    noise_variance: float = 0.1
    target_nnz: int = 500

    def __post_init__(self):
        if self.true_rank < 1:
            raise ValueError("true_rank must be >= 1")
        if len(self.dims) != 3 or any(d <= 0 for d in self.dims):
            raise ValueError("dims must be three positive integers")
        if self.target_nnz < 1:
            raise ValueError("target_nnz must be >= 1")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(
            self, "factor_mode", FactorMode(self.factor_mode)
        )
        object.__setattr__(self, "noise", NoiseKind(self.noise))


def _component_support_sizes(target: int, rank: int, dims) -> list[tuple[int, int, int]]:
    """Per-component nonzero counts per mode, chosen greedily so the
    summed support sizes land near `target`."""
    sizes = []
    remaining = float(target)
    for f in range(rank):
        goal = max(remaining / (rank - f), 1.0)
        base = max(int(np.floor(goal ** (1.0 / 3.0))), 1)
        candidates = []
        for da in (0, 1):
            for db in (0, 1):
                for dc in (0, 1):
                    triple = (
                        min(base + da, dims[0]),
                        min(base + db, dims[1]),
                        min(base + dc, dims[2]),
                    )
                    candidates.append(triple)
        best = min(candidates, key=lambda tr: abs(tr[0] * tr[1] * tr[2] - goal))
        sizes.append(best)
        remaining -= best[0] * best[1] * best[2]
    return sizes


def _sparse_factors(rng, dims, rank: int, target: int):
    sizes = _component_support_sizes(target, rank, dims)
    mats = [np.zeros((d, rank)) for d in dims]
    for f, triple in enumerate(sizes):
        for mode, count in enumerate(triple):
            support = rng.choice(dims[mode], size=count, replace=False)
            mats[mode][support, f] = rng.integers(1, _VALUE_HIGH + 1, size=count)
    return mats


def _dense_factors(rng, dims, rank: int):
    return [rng.integers(1, _VALUE_HIGH + 1, size=(d, rank)).astype(float) for d in dims]


def _well_conditioned(mats) -> bool:
    for m in mats:
        s = np.linalg.svd(m, compute_uv=False)
        if s[0] == 0.0 or s[-1] / s[0] < _RANK_GUARD:
            return False
    return True


def generate(spec: SynthSpec) -> tuple[SparseTensor3, FactorSet]:
    """Generate a tensor and its ground-truth factors.

    Factors have nonnegative integer entries and are redrawn until each
    has full column rank, so an exact decomposition at the true rank
    exists. Deterministic per seed.
    """
    rng = np.random.default_rng(spec.seed)
    dims = spec.dims
    for attempt in range(_MAX_REDRAWS):
        if spec.factor_mode is FactorMode.DENSE:
            mats = _dense_factors(rng, dims, spec.true_rank)
        else:
            mats = _sparse_factors(rng, dims, spec.true_rank, spec.target_nnz)
        if _well_conditioned(mats):
            break
    else:
        logger.warning("factor redraw limit hit; using the last draw")
    truth = FactorSet(*mats)
    dense = truth.to_dense()
    if spec.noise is NoiseKind.GAUSSIAN:
        dense = dense + rng.normal(0.0, np.sqrt(spec.noise_variance), size=dims)
    subs = np.argwhere(dense != 0.0)
    vals = dense[subs[:, 0], subs[:, 1], subs[:, 2]]
    tensor = SparseTensor3(dims, subs, vals)
    if spec.factor_mode is FactorMode.SPARSE and spec.noise is NoiseKind.NONE:
        achieved = tensor.nnz
        if abs(achieved - spec.target_nnz) > 0.5 * spec.target_nnz:
            logger.warning(
                "sparse generation achieved %d nonzeros against target %d",
                achieved,
                spec.target_nnz,
            )
    return tensor, truth
