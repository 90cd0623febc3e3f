"""Command-line interface.

Subcommands: decompose, corcondia, autoten, synth, bench. All outputs are
CSV/JSON; every result JSON echoes the invocation for reproducibility.
Exit codes: 0 ok, 2 usage or I/O error, 3 numerical error. The AUTOTEN_LOG
environment variable (error|warn|info|debug) sets stderr log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .corcondia import Loss, corcondia_fro, corcondia_kl
from .cp_apr import cp_apr_fit
from .cp_nmu import SolverConfig, cp_nmu_fit
from .io import CooParseError, load_coo, load_factors, save_coo, save_factors, save_matrix_csv
from .kron import SingularFactorError
from .selection import AutoTenConfig, Strategy, autoten_run, derive_seed
from .synth import FactorMode, NoiseKind, SynthSpec, generate
from .tensor import DimensionMismatchError, FactorSet, reconstruct_residual_fro

logger = logging.getLogger("autoten.cli")

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


class UsageError(Exception):
    """Bad flags or unreadable input; maps to exit code 2."""


class NumericalFailure(Exception):
    """Solver or diagnostic failure; maps to exit code 3."""


def _configure_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get("AUTOTEN_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")


def _echo(args: argparse.Namespace) -> dict:
    skip = {"func"}
    return {k: (v.name if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in skip}


def _load_tensor(path: str):
    try:
        return load_coo(path)
    except (OSError, CooParseError) as exc:
        raise UsageError(f"cannot read tensor {path}: {exc}") from exc


def _write_json(payload: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _fit(t, loss: Loss, cfg_base: SolverConfig, restarts: int):
    best = None
    best_metric = None
    iterations = 0
    for restart in range(restarts):
        cfg = cfg_base.with_seed(derive_seed(cfg_base.seed, 0 if loss is Loss.FRO else 1, cfg_base.rank, restart))
        if loss is Loss.FRO:
            fs, trace = cp_nmu_fit(t, cfg, return_trace=True)
            metric = float(trace[-1]) if trace.size else 0.0
            better = best_metric is None or metric < best_metric
        else:
            fs, trace = cp_apr_fit(t, cfg, return_trace=True)
            metric = float(trace[-1]) if trace.size else 0.0
            better = best_metric is None or metric > best_metric
        if better:
            best, best_metric, iterations = fs, metric, int(trace.size)
    return best, best_metric, iterations


def cmd_decompose(args) -> int:
    if args.rank < 1:
        raise UsageError("rank must be >= 1")
    t = _load_tensor(args.input)
    loss = Loss(args.loss)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SolverConfig(args.rank, args.max_iters, args.tol, args.seed)
    try:
        fs, metric, iterations = _fit(t, loss, cfg, args.restarts)
    except ValueError as exc:
        raise NumericalFailure(str(exc)) from exc
    save_factors(fs, out)
    if loss is Loss.FRO:
        norm = t.norm()
        fit = 1.0 - metric / norm if norm > 0 else 1.0
    else:
        fit = metric  # final log-likelihood
    _write_json(
        {
            "loss": loss.value,
            "rank": args.rank,
            "fit": fit,
            "iterations": iterations,
            "seed": args.seed,
            "invocation": _echo(args),
        },
        out / "result.json",
    )
    return 0


def cmd_corcondia(args) -> int:
    if (args.rank is None) == (args.factors is None):
        raise UsageError("exactly one of --rank or --factors is required")
    t = _load_tensor(args.input)
    loss = Loss(args.loss)
    if args.factors is not None:
        try:
            fs = load_factors(args.factors)
        except (OSError, FileNotFoundError, ValueError) as exc:
            raise UsageError(f"cannot read factors from {args.factors}: {exc}") from exc
    else:
        if args.rank < 1:
            raise UsageError("rank must be >= 1")
        cfg = SolverConfig(args.rank, args.max_iters, args.tol, args.seed)
        try:
            fs, _, _ = _fit(t, loss, cfg, args.restarts)
        except ValueError as exc:
            raise NumericalFailure(str(exc)) from exc
    try:
        diag = corcondia_fro(t, fs) if loss is Loss.FRO else corcondia_kl(t, fs)
    except (SingularFactorError, np.linalg.LinAlgError) as exc:
        raise NumericalFailure(str(exc)) from exc
    except (ValueError, DimensionMismatchError) as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    rank = diag.core.shape[0]
    with open(out / "core.csv", "w", encoding="utf-8") as fh:
        fh.write(f"# {rank} {rank} {rank}\n")
        for (i, j, k), v in np.ndenumerate(diag.core):
            fh.write(f"{i},{j},{k},{v!r}\n")
    _write_json(
        {
            "c": diag.c,
            "loss": diag.loss.value,
            "rank": rank,
            "iterations": diag.iterations,
            "trivial": diag.trivial,
            "invocation": _echo(args),
        },
        out / "diagnostic.json",
    )
    print(f"{diag.c:.6f}")
    return 0


def cmd_autoten(args) -> int:
    if args.fmax < 2:
        raise UsageError("fmax must be >= 2")
    t = _load_tensor(args.input)
    cfg = AutoTenConfig(seed=args.seed, jobs=args.jobs)
    try:
        result = autoten_run(t, args.fmax, cfg, Strategy(args.strategy))
    except ValueError as exc:
        raise NumericalFailure(str(exc)) from exc
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    fro_curve, kl_curve = result.curves
    with open(out / "curves.csv", "w", encoding="utf-8") as fh:
        fh.write("rank,c_fro,c_kl\n")
        for rank, cf, ck in zip(fro_curve.ranks, fro_curve.c, kl_curve.c):
            fh.write(f"{rank},{cf:.10f},{ck:.10f}\n")
    _write_json(
        {
            "loss": result.loss.value,
            "f_star": result.f_star,
            "c_star": result.c_star,
            "strategy": result.strategy.value,
            "warnings": list(result.warnings),
            "invocation": _echo(args),
        },
        out / "selection.json",
    )
    if result.factors is not None:
        save_factors(result.factors, out)
    for w in result.warnings:
        print(w, file=sys.stderr)
    print(f"loss={result.loss.value} F*={result.f_star} c*={result.c_star:.6f}")
    return 0


def cmd_synth(args) -> int:
    try:
        dims = tuple(int(d) for d in args.dims.split(","))
        spec = SynthSpec(
            dims, args.rank, FactorMode(args.mode), NoiseKind(args.noise), seed=args.seed
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    t, truth = generate(spec)
    out = Path(args.output)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    save_coo(t, out)
    for name, mat in zip(("A", "B", "C"), truth.matrices()):
        save_matrix_csv(mat, out.with_name(out.name + f".true_{name}.csv"))
    print(f"wrote {t.nnz} nonzeros to {out}")
    return 0


def cmd_bench(args) -> int:
    cells = None
    if args.cells:
        cells = []
        for token in args.cells.split(","):
            try:
                mode, noise, f_o = token.split(":")
                cells.append(
                    bench_mod.BenchCell(FactorMode(mode), NoiseKind(noise), int(f_o))
                )
            except ValueError as exc:
                raise UsageError(f"bad cell spec {token!r} (want mode:noise:rank)") from exc
    report = bench_mod.run_benchmark(
        trials=args.trials, seed=args.seed, cells=cells, jobs=args.jobs
    )
    report["config"]["invocation"] = _echo(args)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    bench_mod.write_report_json(report, out / "report.json")
    bench_mod.write_report_csv(report, out / "report.csv")
    pooled = report["pooled_noisy"]
    print(
        "noisy cells won vs baseline2: {wins_vs_baseline2}/{cells}, "
        "vs baseline3: {wins_vs_baseline3}/{cells}".format(**pooled)
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autoten", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_solver_flags(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--max-iters", type=int, default=None)
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--restarts", type=int, default=1)

    p = sub.add_parser("decompose", help="fit one decomposition and write factor CSVs")
    p.add_argument("--input", required=True)
    p.add_argument("--loss", choices=["fro", "kl"], required=True)
    p.add_argument("--rank", type=int, required=True)
    add_solver_flags(p)
    p.add_argument("--output", default="autoten_out")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("corcondia", help="score a decomposition's core consistency")
    p.add_argument("--input", required=True)
    p.add_argument("--loss", choices=["fro", "kl"], required=True)
    p.add_argument("--rank", type=int, default=None, help="fit this rank first")
    p.add_argument("--factors", default=None, help="directory with A.csv B.csv C.csv")
    add_solver_flags(p)
    p.add_argument("--output", default="autoten_out")
    p.set_defaults(func=cmd_corcondia)

    p = sub.add_parser("autoten", help="grid search plus automatic selection")
    p.add_argument("--input", required=True)
    p.add_argument("--fmax", type=int, required=True)
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default=Strategy.MAX_F.value)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--output", default="autoten_out")
    p.set_defaults(func=cmd_autoten)

    p = sub.add_parser("synth", help="generate a synthetic tensor file")
    p.add_argument("--dims", default="50,50,50")
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--mode", choices=[m.value for m in FactorMode], default="sparse")
    p.add_argument("--noise", choices=[n.value for n in NoiseKind], default="none")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default="synthetic.coo")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="rank-recovery benchmark against the baselines")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--cells", default=None, help="comma list of mode:noise:rank cells")
    p.add_argument("--output", default="autoten_bench")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    defaults = {"fro": (500, 1e-6), "kl": (200, 1e-4)}
    if hasattr(args, "max_iters") and getattr(args, "loss", None) in defaults:
        d_iters, d_tol = defaults[args.loss]
        if args.max_iters is None:
            args.max_iters = d_iters
        if args.tol is None:
            args.tol = d_tol
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (SingularFactorError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
