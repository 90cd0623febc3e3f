"""Automatic rank and loss selection over a grid of decompositions.

For every rank in 2..f_max the tensor is decomposed under both losses and
each result is scored with the matching core-consistency diagnostic,
giving one quality curve per loss. A two-step rule (2-means split of the
quality values, then the largest rank inside the good cluster) picks a
candidate per curve, and a strategy arbitrates between the losses.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .corcondia import Loss, corcondia_fro, corcondia_kl
from .cp_apr import cp_apr_fit
from .cp_nmu import SolverConfig, cp_nmu_fit
from .kron import SingularFactorError
from .tensor import FactorSet, SparseTensor3

logger = logging.getLogger("autoten.selection")

LOW_QUALITY_THRESHOLD = 20.0

NO_STRUCTURE_WARNING = "no good structure detected"
LOW_QUALITY_WARNING = (
    "winning quality is below {threshold:g}; the decomposition may not "
    "capture coherent structure"
)


class Strategy(enum.Enum):
    SUM = "sum"
    MAX_C = "maxc"
    MAX_F = "maxf"
    AREA = "area"


@dataclass(frozen=True)
class QualityCurve:
    """Per-rank diagnostic values for one loss; values live in [0, 100]."""

    loss: Loss
    ranks: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        ranks = np.asarray(self.ranks, dtype=np.int64).ravel()
        c = np.asarray(self.c, dtype=np.float64).ravel()
        if ranks.shape != c.shape:
            raise ValueError("ranks and c must have equal length")
        if ranks.size == 0:
            raise ValueError("curve must contain at least one point")
        if np.any(np.diff(ranks) <= 0):
            raise ValueError("ranks must be strictly increasing")
        if c.min() < -1e-9 or c.max() > 100.0 + 1e-9:
            raise ValueError("quality values must lie in [0, 100]")
        c = np.clip(c, 0.0, 100.0)
        ranks.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "ranks", ranks)
        object.__setattr__(self, "c", c)


@dataclass(frozen=True)
class SelectionResult:
    loss: Loss
    f_star: int
    c_star: float
    factors: FactorSet | None
    curves: tuple[QualityCurve, QualityCurve]
    strategy: Strategy
    warnings: tuple[str, ...] = ()

    @property
    def no_structure(self) -> bool:
        return self.f_star == 0


@dataclass(frozen=True)
class AutoTenConfig:
    """Grid settings: base seed, parallelism and per-solver budgets."""

    seed: int = 0
    jobs: int = 1
    restarts: int = 1
    nmu_max_iters: int = 500
    nmu_tol: float = 1e-6
    apr_max_iters: int = 200
    apr_tol: float = 1e-4

    def __post_init__(self):
        if self.jobs < 1 or self.restarts < 1:
            raise ValueError("jobs and restarts must be >= 1")


def derive_seed(*key: int) -> int:
    """Stable 64-bit seed from an integer key tuple; independent of
    scheduling so parallel grids reproduce serial ones."""
    words = np.random.SeedSequence(tuple(int(k) for k in key)).generate_state(2)
    return int(words[0]) | (int(words[1]) << 32)


_LOSS_CODE = {Loss.FRO: 0, Loss.KL: 1}


def _two_means_high_mask(values: np.ndarray) -> np.ndarray | None:
    """1-D 2-means from the extreme values; returns the higher-mean
    cluster's mask, or None when the split degenerates (equal means or an
    empty cluster), in which case every point counts as good."""
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        return None
    high = np.abs(values - hi) < np.abs(values - lo)
    for _ in range(100):
        if not high.any() or high.all():
            return None
        m_lo = values[~high].mean()
        m_hi = values[high].mean()
        new_high = np.abs(values - m_hi) < np.abs(values - m_lo)
        if np.array_equal(new_high, high):
            break
        high = new_high
    if not high.any() or high.all():
        return None
    m_lo = values[~high].mean()
    m_hi = values[high].mean()
    if m_lo == m_hi:
        return None
    return high if m_hi > m_lo else ~high


def two_step_max(curve: QualityCurve) -> tuple[int, float]:
    """Split the curve's values with 2-means, then take the largest rank
    inside the good cluster. An all-zero curve yields the (0, 0.0)
    sentinel meaning no usable structure."""
    if np.all(curve.c == 0.0):
        return 0, 0.0
    mask = _two_means_high_mask(curve.c)
    if mask is None:
        mask = np.ones(curve.c.shape, dtype=bool)
    pos = np.flatnonzero(mask)
    best = pos[np.argmax(curve.ranks[pos])]
    return int(curve.ranks[best]), float(curve.c[best])


def _area_score(c: float, f: int) -> float:
    if c <= 1.0:
        return 0.0
    return float(np.log(c) * np.log(f))


def _pick_loss(fro_value, kl_value, prefer_kl: bool) -> Loss:
    if kl_value > fro_value:
        return Loss.KL
    if fro_value > kl_value:
        return Loss.FRO
    return Loss.KL if prefer_kl else Loss.FRO


def select(
    fro: QualityCurve,
    kl: QualityCurve,
    strategy: Strategy = Strategy.MAX_F,
    *,
    prefer_kl: bool = False,
    factors: dict | None = None,
) -> SelectionResult:
    """Arbitrate between the two quality curves.

    SUM compares the curves' total quality, MAX_C the per-curve best
    quality, MAX_F the per-curve chosen rank; AREA skips the two-step
    rule and maximizes log(c)*log(F) over all points of both curves.
    Ties go to KL when `prefer_kl` (count-valued data), else to
    Frobenius. `factors` optionally maps (loss, rank) to the fitted
    FactorSet so the winner can be attached.
    """
    if not np.array_equal(fro.ranks, kl.ranks):
        raise ValueError("curves must share the same rank grid")
    strategy = Strategy(strategy)
    stars = {Loss.FRO: two_step_max(fro), Loss.KL: two_step_max(kl)}
    curves = {Loss.FRO: fro, Loss.KL: kl}

    if strategy is Strategy.AREA:
        best_per_loss = {}
        for loss, curve in curves.items():
            scores = [_area_score(c, f) for f, c in zip(curve.ranks, curve.c)]
            order = max(range(len(scores)), key=lambda i: (scores[i], curve.ranks[i]))
            best_per_loss[loss] = (scores[order], int(curve.ranks[order]), float(curve.c[order]))
        g_fro, g_kl = best_per_loss[Loss.FRO][0], best_per_loss[Loss.KL][0]
        if g_fro == 0.0 and g_kl == 0.0:
            loss, f_star, c_star = (Loss.KL if prefer_kl else Loss.FRO), 0, 0.0
        else:
            loss = _pick_loss(g_fro, g_kl, prefer_kl)
            _, f_star, c_star = best_per_loss[loss]
    elif strategy is Strategy.SUM:
        loss = _pick_loss(float(fro.c.sum()), float(kl.c.sum()), prefer_kl)
        f_star, c_star = stars[loss]
    elif strategy is Strategy.MAX_C:
        loss = _pick_loss(stars[Loss.FRO][1], stars[Loss.KL][1], prefer_kl)
        f_star, c_star = stars[loss]
    else:  # MAX_F
        loss = _pick_loss(stars[Loss.FRO][0], stars[Loss.KL][0], prefer_kl)
        f_star, c_star = stars[loss]

    warnings = []
    if f_star == 0:
        warnings.append(NO_STRUCTURE_WARNING)
    elif c_star < LOW_QUALITY_THRESHOLD:
        warnings.append(LOW_QUALITY_WARNING.format(threshold=LOW_QUALITY_THRESHOLD))
    winner = factors.get((loss, f_star)) if factors else None
    return SelectionResult(
        loss, f_star, c_star, winner, (fro, kl), strategy, tuple(warnings)
    )


@dataclass(frozen=True)
class GridDetails:
    factors: dict
    warnings: tuple[str, ...]


def _fit_cell(t: SparseTensor3, loss: Loss, f: int, cfg: AutoTenConfig):
    """Best-of-restarts fit for one (loss, rank) cell.

    Returns (factors, metric) where metric is the final residual under
    Frobenius loss or the final log-likelihood under KL.
    """
    best = None
    best_metric = None
    for restart in range(cfg.restarts):
        seed = derive_seed(cfg.seed, _LOSS_CODE[loss], f, restart)
        if loss is Loss.FRO:
            solver_cfg = SolverConfig(f, cfg.nmu_max_iters, cfg.nmu_tol, seed)
            fs, trace = cp_nmu_fit(t, solver_cfg, return_trace=True)
            metric = float(trace[-1]) if trace.size else 0.0
            better = best_metric is None or metric < best_metric
        else:
            solver_cfg = SolverConfig(f, cfg.apr_max_iters, cfg.apr_tol, seed)
            fs, trace = cp_apr_fit(t, solver_cfg, return_trace=True)
            metric = float(trace[-1]) if trace.size else 0.0
            better = best_metric is None or metric > best_metric
        if better:
            best, best_metric = fs, metric
    return best, best_metric


def _score_cell(t: SparseTensor3, fs: FactorSet, loss: Loss, f: int):
    """Diagnostic value for a fitted cell, truncated at zero; failures
    score 0 with a warning."""
    warnings = []
    try:
        diag = corcondia_fro(t, fs) if loss is Loss.FRO else corcondia_kl(t, fs)
        c = diag.c
        if not np.isfinite(c):
            warnings.append(f"non-finite diagnostic at ({loss.value}, f={f}); set to 0")
            c = 0.0
    except SingularFactorError as exc:
        warnings.append(
            f"rank-deficient decomposition at ({loss.value}, f={f}); "
            f"quality set to 0 ({exc})"
        )
        c = 0.0
    return max(float(c), 0.0), warnings


def _evaluate_cell(t: SparseTensor3, loss: Loss, f: int, cfg: AutoTenConfig):
    """Fit one (loss, rank) cell and score it; returns (c, factors, warnings)."""
    fs, _ = _fit_cell(t, loss, f, cfg)
    c, warnings = _score_cell(t, fs, loss, f)
    return c, fs, warnings


def _cell_task(payload):
    t, loss, f, cfg = payload
    return _evaluate_cell(t, loss, f, cfg)


def _kl_view(t: SparseTensor3) -> tuple[SparseTensor3, list[str]]:
    if not t.has_negative():
        return t, []
    warning = "tensor has negative entries; KL cells use a copy clamped at zero"
    logger.warning(warning)
    return t.clamp_nonnegative(), [warning]


def build_curves(
    t: SparseTensor3,
    f_max: int,
    cfg: AutoTenConfig | None = None,
    *,
    return_details: bool = False,
):
    """Evaluate the (loss, rank) grid for ranks 2..f_max.

    Returns the Frobenius and KL quality curves; with `return_details`
    also a :class:`GridDetails` holding per-cell factors and accumulated
    warnings. Diagnostic failures score 0 with a warning. Cells are
    independent; `cfg.jobs` > 1 evaluates them in worker processes with
    identical results.
    """
    if f_max < 2:
        raise ValueError("fmax must be >= 2")
    cfg = cfg or AutoTenConfig()
    t_kl, warnings = _kl_view(t)
    ranks = list(range(2, f_max + 1))
    payloads = [
        (t if loss is Loss.FRO else t_kl, loss, f, cfg)
        for f in ranks
        for loss in (Loss.FRO, Loss.KL)
    ]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(_cell_task, payloads, chunksize=1))
    else:
        outcomes = [_cell_task(p) for p in payloads]

    c_values = {}
    factors = {}
    for (_, loss, f, _), (c, fs, cell_warnings) in zip(payloads, outcomes):
        c_values[(loss, f)] = c
        factors[(loss, f)] = fs
        warnings.extend(cell_warnings)
    fro_curve = QualityCurve(Loss.FRO, ranks, [c_values[(Loss.FRO, f)] for f in ranks])
    kl_curve = QualityCurve(Loss.KL, ranks, [c_values[(Loss.KL, f)] for f in ranks])
    for w in warnings:
        logger.warning(w)
    if return_details:
        return fro_curve, kl_curve, GridDetails(factors, tuple(warnings))
    return fro_curve, kl_curve


def autoten_run(
    t: SparseTensor3,
    f_max: int,
    cfg: AutoTenConfig | None = None,
    strategy: Strategy = Strategy.MAX_F,
) -> SelectionResult:
    """Full pipeline: build both quality curves, then select rank and loss.

    Count-valued tensors break loss ties toward KL. The result carries a
    "no good structure" warning when both curves are identically zero and
    a low-quality warning when the winning value is small.
    """
    fro_curve, kl_curve, details = build_curves(t, f_max, cfg, return_details=True)
    result = select(
        fro_curve,
        kl_curve,
        strategy,
        prefer_kl=t.is_count_valued(),
        factors=details.factors,
    )
    merged = details.warnings + result.warnings
    for w in result.warnings:
        logger.warning(w)
    return replace(result, warnings=merged)
