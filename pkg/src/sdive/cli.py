"""Command-line front end: ``sdive fit|simulate|diagnose|tune``.

Exit status is 0 on success, 1 on usage, data or numerical errors, and 2
when a fit ran but did not converge.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import re
import sys

import numpy as np

from .datasets import load_dataset
from .diagnostics import influence_function_model, sandwich_cov, second_order_if, transparency_residual
from .divergence import TuningPair
from .estimator import FitConfig, fit
from .exceptions import SdiveError
from .models import NormalMeanModel, NormalModel
from .quadrature import QuadratureSpec
from .simulation import load_config, run_simulation
from .smoothing import BandwidthRule, KernelSpec
from .tuning import DEFAULT_ALPHA_GRID, DEFAULT_LAMBDA_GRID, TuningSearchConfig, select_tuning

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; remap that to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _num(v):
    """Round to 6 significant digits for output."""
    v = float(v)
    if not np.isfinite(v):
        return None
    return float(f"{v:.6g}")


def _matrix(M):
    return [[_num(v) for v in row] for row in np.atleast_2d(M)]


def _quad(args) -> QuadratureSpec:
    if getattr(args, "quad_tol", None) is not None:
        if not args.quad_tol > 0:
            raise UsageError("--quad-tol must be positive")
        return QuadratureSpec.from_env(abs_tol=args.quad_tol)
    return QuadratureSpec.from_env()


def _floats(text, flag):
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"{flag} must be a comma-separated list of numbers") from None
    if not vals:
        raise UsageError(f"{flag} is empty")
    return vals


def _model(name, sigma=None):
    if name == "normal":
        return NormalModel()
    if name == "normal-mean":
        return NormalMeanModel(1.0 if sigma is None else sigma)
    raise UsageError(f"unknown model {name!r}")


# --------------------------------------------------------------------------
# fit

def cmd_fit(args) -> int:
    method = args.method.replace("-", "_")
    if method == "mdpde" and args.lam != 0:
        raise UsageError("--method mdpde requires --lambda 0")
    if args.cov and method == "msde_beran":
        raise UsageError("--cov is available for msde-star and mdpde only")
    ds = load_dataset(args.data)
    model = _model(args.model)
    quad = _quad(args)
    rule = BandwidthRule.parse(args.bandwidth)
    kernel = None if method == "mdpde" else KernelSpec("gaussian", rule.resolve(ds.values))
    cfg = FitConfig(method=method, tuning=TuningPair(args.alpha, args.lam), kernel=kernel,
                    quad=quad, multi_start=args.multi_start)
    res = fit(ds.values, model, cfg)
    names = model.param_names
    out = {
        "method": args.method,
        "alpha": args.alpha,
        "lambda": args.lam,
        # full precision so the value can be fed back through --bandwidth
        "bandwidth": None if kernel is None else float(kernel.bandwidth),
        "theta_hat": {n: _num(v) for n, v in zip(names, res.theta_hat)},
        "objective": _num(res.objective),
        "estimating_eq_norm": _num(res.estimating_eq_norm),
        "converged": bool(res.converged),
        "iterations": int(res.iterations),
    }
    if args.cov:
        S = sandwich_cov(model, res.theta_hat, kernel, args.alpha, quad=quad).sandwich
        out["asymptotic_cov"] = _matrix(S / ds.n)
    out["dataset_n"] = ds.n
    print(json.dumps(out, indent=2))
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


# --------------------------------------------------------------------------
# simulate

def cmd_simulate(args) -> int:
    config = load_config(args.config)
    changes = {}
    if args.workers is not None:
        changes["worker_count"] = args.workers
    if args.replications is not None:
        changes["replications"] = args.replications
    if changes:
        config = dataclasses.replace(config, **changes)
    report = run_simulation(config)
    csv_path, meta_path = report.write(args.out)
    print(json.dumps({"cells": report.meta["cells"],
                      "wall_time_seconds": report.meta["wall_time_seconds"],
                      "report": csv_path, "meta": meta_path}, indent=2))
    return EXIT_OK


# --------------------------------------------------------------------------
# diagnose

def _grid(text):
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise UsageError("--grid must be lo:hi:step") from None
    if not (step > 0 and hi >= lo):
        raise UsageError("--grid needs step > 0 and hi >= lo")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def cmd_diagnose(args) -> int:
    if args.sigma <= 0:
        raise UsageError("--sigma must be positive")
    if args.bandwidth < 0:
        raise UsageError("--bandwidth must be nonnegative")
    model = _model(args.model, args.sigma)
    theta = np.array([args.mu, args.sigma]) if args.model == "normal" else np.array([args.mu])
    if args.second_order and model.dim != 1:
        raise UsageError("--second-order needs a scalar parameter; use --model normal-mean")
    quad = _quad(args)
    kernel = KernelSpec("gaussian", args.bandwidth) if args.bandwidth > 0 else None
    tuning = TuningPair(args.alpha, args.lam)
    y = _grid(args.grid)
    if args.second_order:
        if kernel is None:
            raise UsageError("--second-order needs --bandwidth > 0")
        report = second_order_if(model, theta, kernel, tuning, y, quad=quad).as_if_report(
            model.param_names)
    else:
        report = influence_function_model(model, theta, kernel, tuning, y, quad=quad)
    cov = sandwich_cov(model, theta, kernel, args.alpha, quad=quad)
    summary = {"param_names": list(model.param_names), "sandwich": _matrix(cov.sandwich),
               "J_star": _matrix(cov.J_star), "V_star": _matrix(cov.V_star)}
    if args.transparency:
        if kernel is None:
            raise UsageError("--transparency needs --bandwidth > 0")
        tr = transparency_residual(model, theta, kernel, args.alpha, quad=quad)
        summary["transparency"] = {"max_residual": float(f"{tr.max_residual:.6g}"),
                                   "transparent": bool(tr.transparent),
                                   "M": _matrix(tr.M), "L": [_num(v) for v in np.ravel(tr.L)]}
    text = json.dumps(summary, indent=2)
    if args.out:
        report.to_csv(args.out)
        print(text)
    else:
        sys.stdout.write(report.to_csv())
        print(text, file=sys.stderr)
    return EXIT_OK


# --------------------------------------------------------------------------
# tune

def _pilot(text):
    if text in ("mdpde1", "mdpde_alpha_1"):
        return "mdpde_alpha_1"
    try:
        parts = dict(p.split(":", 1) for p in text.split(","))
        return (float(parts["mu"]), float(parts["sigma"]))
    except (ValueError, KeyError):
        raise UsageError("--pilot must be mdpde1 or mu:<m>,sigma:<s>") from None


def cmd_tune(args) -> int:
    ds = load_dataset(args.data)
    cfg = TuningSearchConfig(alpha_grid=_floats(args.alpha_grid, "--alpha-grid"),
                             lambda_grid=_floats(args.lambda_grid, "--lambda-grid"),
                             pilot=_pilot(args.pilot),
                             bandwidth=BandwidthRule.parse(args.bandwidth),
                             variance=args.variance, quad=_quad(args))
    result = select_tuning(ds.values, NormalModel(), cfg)
    path = args.surface or f"{os.path.splitext(ds.name)[0]}_tuning_surface.csv"
    result.to_csv(path)
    print(json.dumps({"best_alpha": result.best.alpha, "best_lambda": result.best.lam,
                      "surface_path": path}, indent=2))
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sdive", description="Minimum S-divergence estimation with model smoothing.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="fit the normal model to a dataset")
    f.add_argument("--data", required=True, help="CSV path, dataset:short or dataset:newcomb")
    f.add_argument("--model", default="normal", choices=["normal"])
    f.add_argument("--alpha", type=float, required=True)
    f.add_argument("--lambda", dest="lam", type=float, required=True)
    f.add_argument("--method", default="msde-star", choices=["msde-star", "msde-beran", "mdpde"])
    f.add_argument("--bandwidth", default="auto", help="auto, <h> or rel:<h0>")
    f.add_argument("--quad-tol", type=float)
    f.add_argument("--seed", type=int, default=0, help="accepted for reproducible pipelines")
    f.add_argument("--multi-start", action="store_true", help="also start from the MLE")
    f.add_argument("--cov", action="store_true", help="report the sandwich covariance of theta_hat")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="run a Monte-Carlo study from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--workers", type=int)
    s.add_argument("--replications", type=int)
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("diagnose", help="influence function and sandwich at a model point")
    d.add_argument("--model", default="normal", choices=["normal", "normal-mean"])
    d.add_argument("--mu", type=float, required=True)
    d.add_argument("--sigma", type=float, required=True)
    d.add_argument("--alpha", type=float, required=True)
    d.add_argument("--lambda", dest="lam", type=float, default=0.0)
    d.add_argument("--bandwidth", type=float, required=True, help="h; 0 means no smoothing")
    d.add_argument("--grid", required=True, help="lo:hi:step")
    d.add_argument("--second-order", action="store_true")
    d.add_argument("--transparency", action="store_true")
    d.add_argument("--out", help="CSV path; JSON then goes to stdout")
    d.add_argument("--quad-tol", type=float)
    d.set_defaults(func=cmd_diagnose)

    t = sub.add_parser("tune", help="choose (alpha, lambda) by estimated summed MSE")
    t.add_argument("--data", required=True)
    t.add_argument("--alpha-grid", default=",".join(str(a) for a in DEFAULT_ALPHA_GRID))
    t.add_argument("--lambda-grid", default=",".join(str(v) for v in DEFAULT_LAMBDA_GRID))
    t.add_argument("--pilot", default="mdpde1")
    t.add_argument("--bandwidth", default="auto")
    t.add_argument("--variance", default="model", choices=["model", "empirical"])
    t.add_argument("--surface", help="surface CSV path")
    t.add_argument("--quad-tol", type=float)
    t.set_defaults(func=cmd_tune)
    return p


_NEGATIVE_VALUE = re.compile(r"^-[\d.]")


def _join_negative_values(argv):
    """Attach values such as ``-3:3:0.5`` or ``-0.5,0`` to their option."""
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if (a.startswith("--") and "=" not in a and i + 1 < len(argv)
                and _NEGATIVE_VALUE.match(argv[i + 1])):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
        else:
            out.append(a)
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = _join_negative_values(list(sys.argv[1:] if argv is None else argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, SdiveError, ValueError) as exc:
        print(f"sdive {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
