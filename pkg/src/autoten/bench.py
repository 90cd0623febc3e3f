"""Rank-recovery benchmark: automatic selection versus greedy baselines.

Each trial draws a synthetic tensor with known true rank, lets every
method estimate the rank with the same budget f_max = 2 * true_rank, and
records |f_est - f_true|. The two baselines sweep the rank upward and
stop at the first step whose loss (Frobenius residual, or Poisson
log-likelihood for the KL variant) fails to improve by more than eps.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import binomtest

from .corcondia import Loss
from .cp_apr import cp_apr_fit
from .cp_nmu import SolverConfig, cp_nmu_fit
from .selection import (
    AutoTenConfig,
    QualityCurve,
    Strategy,
    _fit_cell,
    _score_cell,
    derive_seed,
    select,
)
from .synth import FactorMode, NoiseKind, SynthSpec, generate
from .tensor import SparseTensor3

logger = logging.getLogger("autoten.bench")

DEFAULT_EPS = 1e-6
DEFAULT_TRUE_RANKS = (2, 3, 4, 5)

# Solver budget used inside benchmark trials; chosen to keep a full
# 100-trial grid tractable on a small workstation.
BENCH_NMU_MAX_ITERS = 200
BENCH_NMU_TOL = 1e-5
BENCH_APR_MAX_ITERS = 75
BENCH_APR_TOL = 1e-3


class Method(enum.Enum):
    AUTOTEN = "autoten"
    BASELINE2 = "baseline2"
    BASELINE3 = "baseline3"


@dataclass(frozen=True)
class TrialResult:
    method: Method
    f_est: int
    f_o: int

    @property
    def error(self) -> int:
        return abs(self.f_est - self.f_o)


@dataclass(frozen=True)
class BenchCell:
    factor_mode: FactorMode
    noise: NoiseKind
    f_o: int

    def label(self) -> str:
        return f"{self.factor_mode.value}:{self.noise.value}:{self.f_o}"


def default_cells(true_ranks=DEFAULT_TRUE_RANKS) -> list[BenchCell]:
    return [
        BenchCell(mode, noise, f_o)
        for mode in (FactorMode.SPARSE, FactorMode.DENSE)
        for noise in (NoiseKind.GAUSSIAN, NoiseKind.NONE)
        for f_o in true_ranks
    ]


def _stop_rule(values, eps: float, *, higher_is_better: bool, relative: bool) -> int:
    """First index (1-based rank) whose successor fails to improve by more
    than eps; returns the last rank when the sweep never stalls."""
    for f in range(1, len(values)):
        prev, cur = values[f - 1], values[f]
        gain = (cur - prev) if higher_is_better else (prev - cur)
        if relative:
            gain /= max(abs(prev), 1e-300)
        if gain <= eps:
            return f  # rank index f corresponds to the previous iteration
    return len(values)


def baseline2(
    t: SparseTensor3,
    f_max: int,
    eps: float = DEFAULT_EPS,
    *,
    seed: int = 0,
    relative: bool = True,
    max_iters: int = BENCH_NMU_MAX_ITERS,
    tol: float = BENCH_NMU_TOL,
) -> int:
    """Greedy rank sweep with the Frobenius solver: stop as soon as the
    residual stops improving by more than eps and report the previous
    rank."""
    if f_max < 2:
        raise ValueError("fmax must be >= 2")
    losses = []
    for f in range(1, f_max + 1):
        cfg = SolverConfig(f, max_iters, tol, derive_seed(seed, 0, f, 0))
        _, trace = cp_nmu_fit(t, cfg, return_trace=True)
        losses.append(trace[-1] if trace.size else 0.0)
        stop = _stop_rule(losses, eps, higher_is_better=False, relative=relative)
        if stop < f:
            return stop
    return _stop_rule(losses, eps, higher_is_better=False, relative=relative)


def baseline3(
    t: SparseTensor3,
    f_max: int,
    eps: float = DEFAULT_EPS,
    *,
    seed: int = 0,
    relative: bool = True,
    max_iters: int = BENCH_APR_MAX_ITERS,
    tol: float = BENCH_APR_TOL,
) -> int:
    """Greedy rank sweep with the Poisson solver, stopping on stalled
    log-likelihood."""
    if f_max < 2:
        raise ValueError("fmax must be >= 2")
    logliks = []
    for f in range(1, f_max + 1):
        cfg = SolverConfig(f, max_iters, tol, derive_seed(seed, 1, f, 0))
        _, trace = cp_apr_fit(t, cfg, return_trace=True)
        logliks.append(trace[-1] if trace.size else 0.0)
        stop = _stop_rule(logliks, eps, higher_is_better=True, relative=relative)
        if stop < f:
            return stop
    return _stop_rule(logliks, eps, higher_is_better=True, relative=relative)


def sign_test_pvalue(errors_a, errors_b) -> float:
    """Two-sided sign test on paired error lists; ties are dropped.
    Returns 1.0 when every pair ties."""
    a = np.asarray(errors_a)
    b = np.asarray(errors_b)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    wins = int(np.sum(a < b))
    informative = int(np.sum(a != b))
    if informative == 0:
        return 1.0
    return float(binomtest(wins, informative, 0.5, alternative="two-sided").pvalue)


def _run_trial(cell: BenchCell, trial: int, base_seed: int, eps: float) -> dict:
    """One paired trial: shared fits feed the automatic method and both
    baselines, so methods are compared on identical decompositions."""
    mode_code = 0 if cell.factor_mode is FactorMode.SPARSE else 1
    noise_code = 0 if cell.noise is NoiseKind.GAUSSIAN else 1
    trial_seed = derive_seed(base_seed, mode_code, noise_code, cell.f_o, trial)
    spec = SynthSpec(
        (50, 50, 50), cell.f_o, cell.factor_mode, cell.noise, seed=trial_seed
    )
    t, _ = generate(spec)
    t_kl = t.clamp_nonnegative() if t.has_negative() else t
    f_max = 2 * cell.f_o
    cfg = AutoTenConfig(
        seed=trial_seed,
        nmu_max_iters=BENCH_NMU_MAX_ITERS,
        nmu_tol=BENCH_NMU_TOL,
        apr_max_iters=BENCH_APR_MAX_ITERS,
        apr_tol=BENCH_APR_TOL,
    )

    losses = []
    logliks = []
    c_fro = {}
    c_kl = {}
    for f in range(1, f_max + 1):
        for loss, tensor, series, curve in (
            (Loss.FRO, t, losses, c_fro),
            (Loss.KL, t_kl, logliks, c_kl),
        ):
            fs, metric = _fit_cell(tensor, loss, f, cfg)
            series.append(metric)
            if f >= 2:
                curve[f], _ = _score_cell(tensor, fs, loss, f)

    ranks = list(range(2, f_max + 1))
    fro_curve = QualityCurve(Loss.FRO, ranks, [c_fro[f] for f in ranks])
    kl_curve = QualityCurve(Loss.KL, ranks, [c_kl[f] for f in ranks])
    chosen = select(fro_curve, kl_curve, Strategy.MAX_F, prefer_kl=t.is_count_valued())
    f_auto = chosen.f_star
    f_b2 = _stop_rule(losses, eps, higher_is_better=False, relative=True)
    f_b3 = _stop_rule(logliks, eps, higher_is_better=True, relative=True)
    return {
        Method.AUTOTEN.value: abs(f_auto - cell.f_o),
        Method.BASELINE2.value: abs(f_b2 - cell.f_o),
        Method.BASELINE3.value: abs(f_b3 - cell.f_o),
    }


def _trial_task(payload):
    return _run_trial(*payload)


def run_benchmark(
    trials: int = 100,
    seed: int = 0,
    cells: list[BenchCell] | None = None,
    jobs: int = 1,
    eps: float = DEFAULT_EPS,
) -> dict:
    """Run the full grid and aggregate a report.

    The report maps directly to the JSON schema written by
    :func:`write_report_json`; per-cell and pooled-over-noisy-cells sign
    tests compare the automatic method against each baseline.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    cells = list(cells) if cells is not None else default_cells()
    started = time.time()
    payloads = [(cell, trial, seed, eps) for cell in cells for trial in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_trial_task, payloads, chunksize=1))
    else:
        outcomes = [_trial_task(p) for p in payloads]

    by_cell: dict[str, dict[str, list[int]]] = {}
    for (cell, _, _, _), outcome in zip(payloads, outcomes):
        rec = by_cell.setdefault(
            cell.label(), {m.value: [] for m in Method}
        )
        for method, err in outcome.items():
            rec[method].append(err)

    report_cells = []
    noisy_auto: list[int] = []
    noisy_b2: list[int] = []
    noisy_b3: list[int] = []
    noisy_wins_b2 = 0
    noisy_wins_b3 = 0
    noisy_count = 0
    for cell in cells:
        rec = by_cell[cell.label()]
        auto, b2, b3 = (
            rec[Method.AUTOTEN.value],
            rec[Method.BASELINE2.value],
            rec[Method.BASELINE3.value],
        )
        entry = {
            "factor_mode": cell.factor_mode.value,
            "noise": cell.noise.value,
            "f_o": cell.f_o,
            "per_method": {
                m.value: {
                    "mean_error": float(np.mean(rec[m.value])),
                    "errors": [int(e) for e in rec[m.value]],
                }
                for m in Method
            },
            "p_vs_baseline2": sign_test_pvalue(auto, b2),
            "p_vs_baseline3": sign_test_pvalue(auto, b3),
        }
        report_cells.append(entry)
        if cell.noise is NoiseKind.GAUSSIAN:
            noisy_count += 1
            noisy_auto.extend(auto)
            noisy_b2.extend(b2)
            noisy_b3.extend(b3)
            if np.mean(auto) < np.mean(b2):
                noisy_wins_b2 += 1
            if np.mean(auto) < np.mean(b3):
                noisy_wins_b3 += 1

    report = {
        "config": {
            "trials": trials,
            "seed": seed,
            "eps": eps,
            "cells": [c.label() for c in cells],
        },
        "cells": report_cells,
        "pooled_noisy": {
            "cells": noisy_count,
            "wins_vs_baseline2": noisy_wins_b2,
            "wins_vs_baseline3": noisy_wins_b3,
            "p_vs_baseline2": sign_test_pvalue(noisy_auto, noisy_b2) if noisy_auto else 1.0,
            "p_vs_baseline3": sign_test_pvalue(noisy_auto, noisy_b3) if noisy_auto else 1.0,
        },
        "elapsed_seconds": time.time() - started,
    }
    return report


def write_report_json(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def write_report_csv(report: dict, path) -> None:
    """One row per cell and method, mirroring the JSON cells."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "factor_mode",
                "noise",
                "f_o",
                "method",
                "mean_error",
                "p_vs_baseline2",
                "p_vs_baseline3",
            ]
        )
        for cell in report["cells"]:
            for method in Method:
                writer.writerow(
                    [
                        cell["factor_mode"],
                        cell["noise"],
                        cell["f_o"],
                        method.value,
                        f'{cell["per_method"][method.value]["mean_error"]:.6f}',
                        f'{cell["p_vs_baseline2"]:.6g}',
                        f'{cell["p_vs_baseline3"]:.6g}',
                    ]
                )
