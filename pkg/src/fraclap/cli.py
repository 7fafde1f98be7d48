"""Command-line front end: ``fraclap {weights,apply,solve,bench}``.

Exit codes: 0 success, 2 invalid configuration, 3 solver non-convergence,
4 numerical failure. Floats are written with 17 significant digits and
files are replaced atomically.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import bench
from .grid import GridFunction, GridSpec, norm_l2, norm_linf, sample, write_csv
from .operator import build_operator
from .solver import DEFAULT_TAU_EXT, DEFAULT_TOL, ConvergenceError, EllipticProblem, solve
from .specfun import DomainError
from .weights import BALLS, SUPPORTED_DIMS, build_table, lag_grid

log = logging.getLogger("fraclap")

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_NUMERICAL = 0, 2, 3, 4


class ConfigError(ValueError):
    """Invalid command-line configuration."""


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        return [_number(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _number(text: str) -> float:
    """Parse a float; simple fractions such as ``1/64`` are accepted."""
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def _emit(text: str, out: str | None) -> None:
    if out:
        _atomic_write(Path(out), text)
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _bounds(flat: Sequence[float] | None, default: list[tuple[float, float]]) -> list[tuple[float, float]]:
    if flat is None:
        return default
    if len(flat) % 2 or not flat:
        raise ConfigError("--domain needs pairs lo,hi")
    pairs = [(flat[i], flat[i + 1]) for i in range(0, len(flat), 2)]
    if any(lo >= hi for lo, hi in pairs):
        raise ConfigError("--domain needs lo < hi on every axis")
    return pairs


def _check_alpha(alpha: float, allow_zero: bool) -> None:
    ok = (0.0 <= alpha <= 2.0) if allow_zero else (0.0 < alpha <= 2.0)
    if not ok:
        interval = "[0, 2]" if allow_zero else "(0, 2]"
        raise ConfigError(f"alpha must lie in {interval}, got {alpha}")


def _check_h(h: float | None) -> float:
    if h is None or not (h > 0 and math.isfinite(h)):
        raise ConfigError("--h must be a positive number")
    return h


def _log_config(args: argparse.Namespace, extra: dict | None = None) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",) and v is not None}
    if extra:
        cfg.update(extra)
    log.info("effective configuration: %s", json.dumps(cfg, sort_keys=True, default=str))
    return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_weights(args: argparse.Namespace) -> int:
    """Write the stencil weights for all squared lags up to ``max_lag`` per axis."""
    _check_alpha(args.alpha, allow_zero=True)
    h = _check_h(args.h)
    if args.dim not in SUPPORTED_DIMS:
        raise ConfigError(f"--dim must be one of {SUPPORTED_DIMS}")
    if args.max_lag < 0:
        raise ConfigError("--max-lag must be >= 0")
    cfg = _log_config(args)
    extents = (args.max_lag + 1,) * args.dim
    table = build_table(args.alpha, h, args.dim, extents, args.ball)
    if args.format == "json":
        body = {"config": cfg, "weights": [{"sq_lag": int(m), "weight": float(w)}
                                           for m, w in zip(table.sq_lags, table.values)]}
        text = _dumps(body)
    else:
        rows = ["alpha,dim,h,ball,sq_lag,weight"]
        rows += [f"{_fmt(args.alpha)},{args.dim},{_fmt(h)},{args.ball},{int(m)},{_fmt(w)}"
                 for m, w in zip(table.sq_lags, table.values)]
        text = "\n".join(rows) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def _apply_1d(args: argparse.Namespace, h: float) -> tuple[GridFunction, dict]:
    example, alpha = args.example, args.alpha
    lo, hi = _bounds(args.domain, [(-1.0, 1.0)])[0]
    if example == "ex1":
        extent = args.extent if args.extent is not None else bench.DEFAULT_EX1_EXTENT
        spec = GridSpec.box(h, [(-extent, extent)])
        u = sample(lambda x: (1.0 + x * x) ** -7, spec)
        meta = {"extent": extent}
    else:
        s, a = args.s if args.s is not None else 4.0, args.a if args.a is not None else 1.0
        spec = GridSpec.box(h, [(-a, a)])
        u = sample(lambda x: np.clip(a * a - x * x, 0.0, None) ** s, spec)
        meta = {"s": s, "a": a}
    v = GridFunction(spec, build_operator(alpha, spec, ball=args.ball).matvec(u.data))
    x = spec.axis(0)
    mask = (x > lo + 1e-9 * h) & (x < hi - 1e-9 * h)
    if alpha == 0:
        exact = u.data[mask]
    elif example == "ex1":
        exact = bench.exact_ex1(alpha, x[mask])
    else:
        exact = bench.exact_ex2(alpha, meta["s"], meta["a"], x[mask])
    err = v.data[mask] - exact
    meta.update(domain=[lo, hi], error_linf=float(np.max(np.abs(err))),
                error_l2=float(math.sqrt(h * float(np.sum(err * err)))))
    return v, meta


def cmd_apply(args: argparse.Namespace) -> int:
    """Apply the discrete operator to an example function and report errors."""
    _check_alpha(args.alpha, allow_zero=True)
    h = _check_h(args.h)
    _log_config(args)
    start = time.perf_counter()
    if args.example in ("ex1", "ex2"):
        result, meta = _apply_1d(args, h)
    else:
        s = args.s if args.s is not None else 4.0
        spec = GridSpec.box(h, _bounds(args.domain, [(-1.0, 1.0)] * 2))
        if spec.dim != 2:
            raise ConfigError("ex3 is two-dimensional")
        u = sample(bench._ex3_field(s), spec)
        result = GridFunction(spec, build_operator(args.alpha, spec, ball=args.ball).matvec(u.data))
        meta = {"s": s, "norm_linf": norm_linf(result), "norm_l2": norm_l2(result)}
        if args.ref_h is not None:
            k = h / args.ref_h
            if abs(k - round(k)) > 1e-9 or round(k) < 4 or args.domain is not None:
                raise ConfigError("--h / --ref-h must be an integer >= 4 on the default domain")
            k = int(round(k))
            ref = bench._ex3_apply(args.alpha, args.ref_h, s, args.ball)
            err = result.data - ref[k - 1::k, k - 1::k]
            meta.update(ref_h=args.ref_h, error_linf=float(np.max(np.abs(err))),
                        error_l2=float(math.sqrt(h * h * float(np.sum(err * err)))))
    report = {"example": args.example, "alpha": args.alpha, "h": h, "ball": args.ball,
              "grid": result.spec.to_dict(), **meta,
              "timing": {"wall_time_ms": 1e3 * (time.perf_counter() - start)}}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(result, out / "result.csv")
        _atomic_write(out / "report.json", _dumps(report))
        log.info("wrote %s", out)
    else:
        sys.stdout.write(_dumps(report))
    return EXIT_OK


def _solve_problem(args: argparse.Namespace, h: float) -> tuple[EllipticProblem, object]:
    """Problem and exact-solution field (or None)."""
    alpha = args.alpha
    if args.problem == "poisson":
        if args.domain is not None:
            raise ConfigError("the poisson problem is posed on (-1, 1)")
        s = args.s if args.s is not None else 0.5 * alpha
        p = bench.poisson_problem(alpha, s, h)
        p = EllipticProblem(p.terms, p.domain, p.rhs, tau_ext=args.tau_ext, ball=args.ball)
        return p, (lambda x: bench.exact_poisson_pair(alpha, s, x)[0])
    bounds = _bounds(args.domain, [(-1.5, 1.5)] * 2 if args.problem == "gauss2d" else [(-1.0, 1.0)] * 2)
    spec = GridSpec.box(h, bounds)
    if args.problem == "gauss2d":
        a = args.a if args.a is not None else 6.0
        p = EllipticProblem(((1.0, alpha),), spec,
                            rhs=lambda *x: bench.exact_ex522_pair(alpha, a, *x)[1],
                            reaction=1.0,
                            exterior=lambda *x: np.exp(-a * a * sum(c * c for c in x)),
                            exterior_extent=args.extent, tau_ext=args.tau_ext, ball=args.ball)
        return p, (lambda *x: np.exp(-a * a * sum(c * c for c in x)))
    lam = args.lambda1 if args.lambda1 is not None else 0.5
    alpha2 = args.alpha2 if args.alpha2 is not None else 2.0
    _check_alpha(alpha2, allow_zero=False)
    if not 0.0 <= lam <= 1.0:
        raise ConfigError("--lambda1 must lie in [0, 1]")
    p = EllipticProblem(((lam, alpha), (1.0 - lam, alpha2)), spec, bench.coexistence_rhs,
                        tau_ext=args.tau_ext, ball=args.ball)
    return p, None


def cmd_solve(args: argparse.Namespace) -> int:
    """Solve a model problem; write the report and the solution."""
    _check_alpha(args.alpha, allow_zero=False)
    h = _check_h(args.h)
    tol = args.tol if args.tol is not None else (
        bench.COEXIST_TOL if args.problem == "coexist" else DEFAULT_TOL)
    if not tol > 0:
        raise ConfigError("--tol must be positive")
    _log_config(args, {"tol": tol, "tau_ext": args.tau_ext})
    p, exact = _solve_problem(args, h)
    code = EXIT_OK
    try:
        rep = solve(p, tol=tol, max_iter=args.max_iter)
    except ConvergenceError as exc:
        log.error("%s", exc)
        rep, code = exc.report, EXIT_CONVERGENCE
    log.info("exterior truncation: %s", json.dumps(rep.truncation, sort_keys=True))
    body = rep.to_dict()
    body["problem"] = args.problem
    body["converged"] = code == EXIT_OK
    if exact is not None:
        err = (rep.solution - sample(exact, p.domain)).data
        body["error_linf"] = float(np.max(np.abs(err)))
        body["error_l2"] = float(math.sqrt(h**p.domain.dim * float(np.sum(err * err))))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(rep.solution, out / "solution.csv")
        _atomic_write(out / "report.json", _dumps(body))
        log.info("wrote %s", out)
    else:
        sys.stdout.write(_dumps(body))
    return code


def cmd_bench(args: argparse.Namespace) -> int:
    """Run a named reproduction suite."""
    overrides = {
        "alphas": args.alphas, "hs": args.hs, "s": args.s, "a": args.a, "ref_h": args.ref_h,
        "extent": args.extent, "tol": args.tol, "ball": args.ball,
    }
    if args.suite == "coexist":
        overrides.pop("alphas")
        overrides.update(lambdas=args.lambda1s, alpha1=args.alpha, alpha2=args.alpha2,
                         h=args.h)
    elif args.suite == "fig6" and (args.alphas or args.s is not None):
        raise ConfigError("fig6 runs fixed (alpha, s) cases; --alphas/--s do not apply")
    for alpha in (args.alphas or []):
        _check_alpha(alpha, allow_zero=args.suite.startswith("table") and args.suite != "table6")
    suite_keys = set(bench.SUITE_DEFAULTS[args.suite]) | {"tol"}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    unused = sorted(set(overrides) - suite_keys - {"ball", "extent"})
    if unused:
        raise ConfigError(f"suite {args.suite} does not take: {', '.join(unused)}")
    cfg = dict(bench.SUITE_DEFAULTS[args.suite])
    cfg.update(overrides)
    log.info("effective configuration: %s",
             json.dumps({"suite": args.suite, **bench._jsonable(cfg)}, sort_keys=True, default=str))
    result = bench.run_suite(args.suite, **overrides)
    _emit(result.to_json() + "\n" if args.format == "json" else result.to_csv(), args.out)
    if args.plot_dir:
        pdir = Path(args.plot_dir)
        for rep in result.reports:
            name = f"{rep.example}_alpha{rep.alpha:g}_{rep.norm}.dat"
            _atomic_write(pdir / name, bench.plot_data(rep))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fraclap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--ball", choices=BALLS, default="volume",
                       help="frequency ball of the 2D/3D stencil (default: volume)")
        p.add_argument("--out", help="output path")

    p = sub.add_parser("weights", help="dump stencil weights")
    p.add_argument("--alpha", type=_number, required=True)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--h", type=_number, default=1.0)
    p.add_argument("--max-lag", type=int, default=8, help="largest lag per axis")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    common(p)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("apply", help="apply the operator to an example function")
    p.add_argument("--example", choices=bench.OPERATOR_EXAMPLES, required=True)
    p.add_argument("--alpha", type=_number, required=True)
    p.add_argument("--h", type=_number, required=True)
    p.add_argument("--s", type=_number)
    p.add_argument("--a", type=_number)
    p.add_argument("--domain", type=_floats, help="lo,hi[,lo,hi...] error domain or grid box")
    p.add_argument("--extent", type=_number, help="ex1 sampling half-width (default 12)")
    p.add_argument("--ref-h", type=_number, help="ex3 reference spacing")
    common(p)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("solve", help="solve a model problem")
    p.add_argument("--problem", choices=("poisson", "gauss2d", "coexist"), required=True)
    p.add_argument("--alpha", type=_number, required=True)
    p.add_argument("--h", type=_number, required=True)
    p.add_argument("--s", type=_number, help="poisson regularity (default alpha/2)")
    p.add_argument("--a", type=_number, help="gauss2d width parameter (default 6)")
    p.add_argument("--lambda1", type=_number, help="coexist mixture weight (default 0.5)")
    p.add_argument("--alpha2", type=_number, help="coexist second order (default 2)")
    p.add_argument("--domain", type=_floats, help="lo,hi,lo,hi box for 2D problems")
    p.add_argument("--tol", type=_number)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--extent", type=_number, help="width of the exterior band")
    p.add_argument("--tau-ext", type=_number, default=DEFAULT_TAU_EXT)
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="run a reproduction suite")
    p.add_argument("--suite", choices=bench.SUITES, required=True)
    p.add_argument("--alphas", type=_floats)
    p.add_argument("--hs", type=_floats)
    p.add_argument("--h", type=_number, help="coexist mesh size")
    p.add_argument("--alpha", type=_number, help="coexist first order")
    p.add_argument("--alpha2", type=_number, help="coexist second order")
    p.add_argument("--lambda1", dest="lambda1s", type=_floats, help="coexist mixture weights")
    p.add_argument("--s", type=_number)
    p.add_argument("--a", type=_number)
    p.add_argument("--ref-h", type=_number)
    p.add_argument("--extent", type=_number)
    p.add_argument("--tol", type=_number)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--plot-dir", help="directory for two-column plot data files")
    p.add_argument("--ball", choices=BALLS, help="override the suite's stencil ball")
    p.add_argument("--out", help="output path")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    # a handler per invocation, so embedding applications keep their own logging setup
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    saved = (log.level, log.propagate)
    log.addHandler(handler)
    log.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    log.propagate = False
    try:
        return _dispatch(args)
    finally:
        log.removeHandler(handler)
        log.setLevel(saved[0])
        log.propagate = saved[1]


def _dispatch(args: argparse.Namespace) -> int:
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        log.error("%s", exc)
        return EXIT_CONVERGENCE
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError, MemoryError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except ValueError as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
