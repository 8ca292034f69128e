"""Command-line entry point: ``mfequil {gen,equilibrate,metrics,bench-lsqr,bench-ccp}``."""

from __future__ import annotations

import argparse
import logging
import math
import sys

import numpy as np

from .core import DEFAULT_GAMMA, DEFAULT_MAX_LOG_SCALE, EquilibrationParams, objective
from .experiments import (
    DEFAULT_BUDGETS,
    ExperimentConfig,
    gen_matrix,
    load_config_file,
    run_ccp_experiment,
    run_equilibration_experiment,
    run_lsqr_experiment,
)
from .exact import NEWTON_SIZE_LIMIT, newton_oracle, sinkhorn_knopp
from .metrics import SVD_SIZE_LIMIT, condition_number, kappa_bounds, rms_error
from .mmio import MatrixMarketError, read_matrix_market, write_matrix_market

log = logging.getLogger("mfequil")

# command -> (rows, cols, density, iters)
_DEFAULTS = {
    "gen": (2000, 1000, 0.01, 1000),
    "equilibrate": (2000, 1000, 0.01, 1000),
    "metrics": (2000, 1000, 0.01, 1000),
    "bench-lsqr": (500, 500, 0.01, 20000),
    "bench-ccp": (500, 1000, 0.01, 3000),
}


def _target(text):
    if text.lower() == "auto":
        return "auto"
    val = float(text)
    if not (val > 0 and math.isfinite(val)):
        raise argparse.ArgumentTypeError("targets must be positive and finite, or 'auto'")
    return val


def _budgets(text):
    try:
        vals = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad budget list {text!r}") from None
    if not vals or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("budgets must be a nonempty list of nonnegative integers")
    return vals


def _add_common(p):
    # defaults are None so an explicit flag can be told apart from a config-file value
    p.add_argument("--config", help="key = value file; explicit flags override it")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--density", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--matrix", help="Matrix Market input (overrides the generator)")
    p.add_argument("--out", help="output path (CSV, or .mtx for gen)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_equil(p):
    p.add_argument("--alpha", type=_target, help="row target or 'auto'")
    p.add_argument("--beta", type=_target, help="column target or 'auto'")
    p.add_argument("--gamma", type=float, help=f"regularization (default {DEFAULT_GAMMA})")
    p.add_argument("--max-scale-log", dest="max_scale_log", type=float,
                   help="box bound M on log-scalings (default ln 1e4)")
    p.add_argument("--iters", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--plot", help="SVG figure path")


def build_parser():
    parser = argparse.ArgumentParser(prog="mfequil", description="Matrix-free stochastic equilibration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a random badly scaled sparse matrix")
    _add_common(p)

    p = sub.add_parser("equilibrate", help="run SGD equilibration with diagnostics")
    _add_common(p)
    _add_equil(p)
    p.add_argument("--cond-stride", dest="cond_stride", type=int)

    p = sub.add_parser("metrics", help="conditioning and balance of a matrix")
    _add_common(p)
    p.add_argument("--alpha", type=_target)
    p.add_argument("--beta", type=_target)
    p.add_argument("--gamma", type=float)
    p.add_argument("--max-scale-log", dest="max_scale_log", type=float)

    for name, what in (("bench-lsqr", "LSQR"), ("bench-ccp", "CCP for the Lasso")):
        p = sub.add_parser(name, help=f"{what} with and without equilibration")
        _add_common(p)
        _add_equil(p)
        p.add_argument("--equil-budgets", dest="equil_budgets", type=_budgets,
                       help="comma-separated equilibration budgets (default 0,10,30,100,300)")
        p.add_argument("--target", type=float, help="stop each variant at this accuracy")
        if name == "bench-ccp":
            p.add_argument("--lam", type=float, help="Lasso weight (default 1e-3 |A^T b|_inf)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    rows, cols, density, iters = _DEFAULTS[args.command]
    values = dict(rows=rows, cols=cols, density=density, iters=iters, gamma=DEFAULT_GAMMA,
                  max_scale_log=DEFAULT_MAX_LOG_SCALE, equil_budgets=DEFAULT_BUDGETS)
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for key, val in vars(args).items():
        if key in ("command", "config", "verbose") or val is None:
            continue
        values[key] = None if val == "auto" else val
    return ExperimentConfig(**values)


def _cmd_gen(cfg):
    A = gen_matrix(cfg.rows, cfg.cols, cfg.density, cfg.seed)
    if not cfg.out:
        raise SystemExit("gen needs --out")
    write_matrix_market(A, cfg.out, comment=f"mfequil gen rows={cfg.rows} cols={cfg.cols} "
                        f"density={cfg.density!r} seed={cfg.seed}")
    print(f"wrote {cfg.out}: {A.rows}x{A.cols}, nnz={A.nnz}")


def _cmd_equilibrate(cfg):
    rep = run_equilibration_experiment(cfg)
    last = rep.rows[-1]
    print(f"iterations {last[0]}  rms_error {last[2]:.6g}"
          + (f"  rel_gap {last[1]:.3e}" if last[1] is not None else "")
          + (f"  loglog slope {rep.slope:.3f}" if not math.isnan(rep.slope) else ""))
    if cfg.out:
        print(f"wrote {cfg.out}")
    if cfg.plot:
        print(f"wrote {cfg.plot}")


def _cmd_metrics(cfg):
    A = read_matrix_market(cfg.matrix) if cfg.matrix else gen_matrix(cfg.rows, cfg.cols, cfg.density, cfg.seed)
    m, n = A.shape
    params = EquilibrationParams(alpha=cfg.alpha, beta=cfg.beta, gamma=cfg.gamma,
                                 max_log_scale=cfg.max_scale_log).resolve(m, n)
    zeros_m, zeros_n = np.zeros(m), np.zeros(n)
    out = [("shape", f"{m}x{n}"), ("nnz", A.nnz),
           ("rms_error", rms_error(A, zeros_m, zeros_n, params.alpha, params.beta)),
           ("objective", objective(A, zeros_m, zeros_n, params))]
    if m == n and n <= SVD_SIZE_LIMIT:
        out.append(("cond_number", condition_number(A)))
        try:
            lo, hi = kappa_bounds(A)
            out += [("kappa_lower", lo), ("kappa_upper", hi)]
        except np.linalg.LinAlgError:
            pass
    if m + n <= NEWTON_SIZE_LIMIT:
        p_star, _, _ = newton_oracle(A, params)
        out.append(("p_star", p_star))
    try:
        sk = sinkhorn_knopp(A, params.alpha, params.beta)
        out.append(("sinkhorn_converged", sk.converged))
    except ValueError as exc:
        out.append(("sinkhorn", str(exc)))
    for k, v in out:
        print(f"{k} = {v}")


def _cmd_bench(cfg, kind):
    rep = (run_lsqr_experiment if kind == "lsqr" else run_ccp_experiment)(cfg)
    for budget, run in rep.runs.items():
        final = run.trajectory()[1][-1]
        print(f"budget {budget:>5d}: total iterations {run.total_iterations}, final {final:.3e}")
    if cfg.out:
        print(f"wrote {cfg.out}")
    if cfg.plot:
        print(f"wrote {cfg.plot}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "gen":
            _cmd_gen(cfg)
        elif args.command == "equilibrate":
            _cmd_equilibrate(cfg)
        elif args.command == "metrics":
            _cmd_metrics(cfg)
        else:
            _cmd_bench(cfg, args.command.split("-")[1])
    except (ValueError, MatrixMarketError, OSError) as exc:
        print(f"mfequil: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
