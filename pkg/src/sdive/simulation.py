"""Monte-Carlo contamination studies and the bandwidth-stability experiment."""

from __future__ import annotations

import configparser
import csv
import io
import json
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .divergence import TuningPair
from .estimator import FitConfig, fit, fit_msde_beran, fit_msde_star
from .exceptions import ConfigError, InvalidInputError, SdiveError
from .models import (DistributionSpec, NormalModel, ParametricModel, parse_spec,
                     robust_location_scale, sample_contaminated)
from .quadrature import DEFAULT_QUAD, QuadratureSpec
from .smoothing import BandwidthRule, KernelSpec

UNRELIABLE_FRACTION = 0.05

# the contamination cases of the normal-model study
CONTAMINATION_CASES = {
    "i": "normal(15,3)",
    "ii": "normal(0,10)",
    "iii": "normal(0,1)",
    "iv": "t(1)",
    "v": "chisq(10)",
}


@dataclass(frozen=True)
class SimulationConfig:
    """One contamination scenario over an ``(alpha, lambda)`` grid.

    ``normal_scale`` says how the second argument of a ``normal(.,.)`` spec
    is read: ``sd`` (default) or ``variance``.
    """

    target: DistributionSpec = field(default_factory=lambda: parse_spec("normal(0,3)"))
    contaminant: DistributionSpec | None = None
    epsilon: float = 0.0
    n: int = 50
    replications: int = 1000
    alpha_grid: tuple = (0.0,)
    lambda_grid: tuple = (0.0,)
    method: str = "msde_star"
    bandwidth_rule: BandwidthRule = field(default_factory=BandwidthRule)
    seed: int = 0
    worker_count: int = 1
    normal_scale: str = "sd"
    quad: QuadratureSpec = DEFAULT_QUAD

    def __post_init__(self):
        if not self.alpha_grid or not self.lambda_grid:
            raise ConfigError("alpha and lambda grids must be nonempty")
        if not (0.0 <= self.epsilon < 1.0):
            raise ConfigError("epsilon must lie in [0, 1)")
        if self.n < 2 or self.replications < 1 or self.worker_count < 1:
            raise ConfigError("n >= 2, replications >= 1 and worker_count >= 1 are required")
        if self.target.kind != "normal":
            raise ConfigError("the target must be a normal(mu, sigma) spec")
        if self.normal_scale not in ("sd", "variance"):
            raise ConfigError("normal_scale must be 'sd' or 'variance'")
        if self.method not in ("msde_star", "msde_beran", "mdpde"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.method == "mdpde" and any(l != 0 for l in self.lambda_grid):
            raise ConfigError("mdpde runs need lambda_grid = 0")

    def _as_sd(self, spec):
        if spec is None or spec.kind != "normal" or self.normal_scale == "sd":
            return spec
        return DistributionSpec("normal", (spec.params[0], float(np.sqrt(spec.params[1]))))

    @property
    def sampling_target(self):
        return self._as_sd(self.target)

    @property
    def sampling_contaminant(self):
        return self._as_sd(self.contaminant)

    @property
    def theta_true(self) -> np.ndarray:
        return np.array(self.sampling_target.params, dtype=float)

    def cells(self):
        return [(float(a), float(l)) for l in self.lambda_grid for a in self.alpha_grid]

    def echo(self) -> dict:
        return {
            "target": str(self.target),
            "contaminant": None if self.contaminant is None else str(self.contaminant),
            "epsilon": self.epsilon, "n": self.n, "replications": self.replications,
            "alpha_grid": list(self.alpha_grid), "lambda_grid": list(self.lambda_grid),
            "method": self.method, "bandwidth_rule": str(self.bandwidth_rule), "seed": self.seed,
            "worker_count": self.worker_count, "normal_scale": self.normal_scale,
        }


# --------------------------------------------------------------------------
# config files

def _line_index(text):
    """Map ``(section, key)`` to the 1-based line number where it is set."""
    out, section = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]$", s)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            out[(section, m.group(1).strip().lower())] = i
    return out


def _floats(text):
    return tuple(float(v) for v in re.split(r"[,\s]+", text.strip()) if v)


def parse_config(text: str, source: str = "<config>") -> SimulationConfig:
    """Parse an INI-style scenario with ``[target]``, ``[contaminant]``, ``[grid]`` and ``[run]``.

    Errors are reported as :class:`ConfigError` naming the offending line.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}, line {exc.lineno}: expected a [section] header") from None
    except configparser.ParsingError as exc:
        lines = ", ".join(str(e[0]) for e in exc.errors)
        raise ConfigError(f"{source}: cannot parse line(s) {lines}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _line_index(text)
    known = {"target": {"dist"}, "contaminant": {"dist", "epsilon"},
             "grid": {"alpha", "lambda"},
             "run": {"n", "replications", "method", "bandwidth", "seed", "workers",
                     "normal_scale"}}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        for key in cp[sec]:
            if key not in known[sec]:
                raise ConfigError(f"{source}, line {lines.get((sec, key), '?')}: "
                                  f"unknown key {key!r} in [{sec}]")

    def get(sec, key, conv, default):
        if not cp.has_option(sec, key):
            if default is _REQUIRED:
                raise ConfigError(f"{source}: missing {key!r} in [{sec}]")
            return default
        raw = cp.get(sec, key)
        try:
            return conv(raw)
        except (ValueError, SdiveError) as exc:
            raise ConfigError(f"{source}, line {lines.get((sec, key), '?')}: bad value for "
                              f"{sec}.{key} = {raw!r} ({exc})") from None

    target = get("target", "dist", parse_spec, _REQUIRED)
    contaminant = get("contaminant", "dist", parse_spec, None)
    epsilon = get("contaminant", "epsilon", float, 0.0)
    kw = dict(
        target=target, contaminant=contaminant, epsilon=epsilon,
        alpha_grid=get("grid", "alpha", _floats, _REQUIRED),
        lambda_grid=get("grid", "lambda", _floats, _REQUIRED),
        n=get("run", "n", int, 50),
        replications=get("run", "replications", int, 1000),
        method=get("run", "method", lambda s: s.strip().replace("-", "_"), "msde_star"),
        bandwidth_rule=get("run", "bandwidth", BandwidthRule.parse, BandwidthRule()),
        seed=get("run", "seed", int, 0),
        worker_count=get("run", "workers", int, 1),
        normal_scale=get("run", "normal_scale", str.strip, "sd"),
    )
    if contaminant is None and epsilon > 0:
        raise ConfigError(f"{source}: epsilon > 0 needs a contaminant dist")
    try:
        return SimulationConfig(**kw)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


_REQUIRED = object()


def load_config(path) -> SimulationConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, source=str(path))


def shipped_config(name: str) -> str:
    """Path of a config shipped with the package (e.g. ``table2.cfg``)."""
    return os.path.join(os.path.dirname(__file__), "data", name)


# --------------------------------------------------------------------------
# running

def replication_sample(config: SimulationConfig, r: int) -> np.ndarray:
    """The sample of replication ``r``; depends only on ``(config.seed, r)``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), int(r)]))
    return sample_contaminated(config.sampling_target, config.sampling_contaminant,
                               config.epsilon, config.n, rng)


def _one_replication(args):
    config, r = args
    x = replication_sample(config, r)
    model = NormalModel()
    cells = config.cells()
    out = np.full((len(cells), 2), np.nan)
    try:
        h = None if config.method == "mdpde" else config.bandwidth_rule.resolve(x)
    except SdiveError:
        return r, out
    for c, (a, l) in enumerate(cells):
        kernel = None if h is None else KernelSpec("gaussian", h)
        cfg = FitConfig(method=config.method, tuning=TuningPair(a, l), kernel=kernel,
                        quad=config.quad)
        try:
            res = fit(x, model, cfg)
        except (SdiveError, ArithmeticError, ValueError):
            continue
        if res.converged:
            out[c] = res.theta_hat
    return r, out


def _run_chunk(args):
    config, rs = args
    return [_one_replication((config, r)) for r in rs]


@dataclass
class SimulationReport:
    records: list
    meta: dict

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        cols = ["alpha", "lambda", "parameter", "bias", "mse", "mc_stderr", "failures",
                "unreliable"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for rec in self.records:
            w.writerow([_fmt(rec[c]) for c in cols])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    def write(self, out_dir) -> tuple[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "report.csv")
        meta_path = os.path.join(out_dir, "meta.json")
        self.to_csv(csv_path)
        with open(meta_path, "w", encoding="utf-8") as fh:
            json.dump(self.meta, fh, indent=2, sort_keys=True)
        return csv_path, meta_path

    def cell(self, alpha, lam, parameter) -> dict:
        for rec in self.records:
            if (np.isclose(rec["alpha"], alpha) and np.isclose(rec["lambda"], lam)
                    and rec["parameter"] == parameter):
                return rec
        raise KeyError((alpha, lam, parameter))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.10g}"


def aggregate(estimates: np.ndarray, theta_true, cells, names=("mu", "sigma")) -> list:
    """Per-cell bias, MSE and the Monte-Carlo standard error of the MSE.

    ``estimates`` has shape ``(replications, cells, p)`` with NaN for failed fits.
    """
    records = []
    reps = estimates.shape[0]
    for c, (a, l) in enumerate(cells):
        est = estimates[:, c, :]
        ok = np.all(np.isfinite(est), axis=1)
        failures = int(reps - ok.sum())
        good = est[ok]
        for j, name in enumerate(names):
            if good.shape[0] == 0:
                bias = mse = se = float("nan")
            else:
                err = good[:, j] - theta_true[j]
                bias = float(np.mean(err))
                sq = err * err
                mse = float(np.mean(sq))
                se = float(np.std(sq, ddof=1) / np.sqrt(sq.size)) if sq.size > 1 else float("nan")
            records.append({"alpha": a, "lambda": l, "parameter": name, "bias": bias, "mse": mse,
                            "mc_stderr": se, "failures": failures,
                            "unreliable": failures > UNRELIABLE_FRACTION * reps})
    return records


def run_simulation(config: SimulationConfig, progress=None) -> SimulationReport:
    """Fit every grid cell on every replication and aggregate bias and MSE.

    Replication ``r`` draws its sample from a seed derived from
    ``(config.seed, r)``, so results do not depend on ``worker_count``.
    Failed or non-converged fits are excluded and counted.
    """
    t0 = time.perf_counter()
    cells = config.cells()
    reps = config.replications
    est = np.full((reps, len(cells), 2), np.nan)
    if config.worker_count == 1:
        for r in range(reps):
            _, out = _one_replication((config, r))
            est[r] = out
            if progress:
                progress(r + 1, reps)
    else:
        chunks = [list(range(i, reps, config.worker_count * 4))
                  for i in range(config.worker_count * 4)]
        chunks = [c for c in chunks if c]
        with ProcessPoolExecutor(max_workers=config.worker_count) as ex:
            for batch in ex.map(_run_chunk, [(config, c) for c in chunks]):
                for r, out in batch:
                    est[r] = out
    records = aggregate(est, config.theta_true, cells)
    meta = {"config": config.echo(), "cells": len(cells),
            "wall_time_seconds": round(time.perf_counter() - t0, 3),
            "theta_true": config.theta_true.tolist()}
    return SimulationReport(records, meta)


# --------------------------------------------------------------------------
# bandwidth stability

@dataclass
class BandwidthStability:
    rows: list            # dicts: alpha, lambda, method, h0, sigma_hat
    summary: list         # dicts: alpha, lambda, range_msde, range_msde_star, ratio

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alpha", "lambda", "method", "h0", "sigma_hat"])
        for r in self.rows:
            w.writerow([_fmt(r["alpha"]), _fmt(r["lambda"]), r["method"], _fmt(r["h0"]),
                        _fmt(r["sigma_hat"])])
        return buf.getvalue()


def bandwidth_stability_experiment(sample, model: ParametricModel, alpha_lambda_list, h0_list,
                                   quad: QuadratureSpec = DEFAULT_QUAD) -> BandwidthStability:
    """Scale estimates of MSDE and MSDE* with ``h = h0 * sigma0`` over ``h0_list``.

    The summary gives, per ``(alpha, lambda)``, the range of the scale
    estimate for each method and their ratio (MSDE over MSDE*); the ratio is
    ``None`` when the MSDE* range is zero (e.g. a single ``h0``).
    """
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise InvalidInputError("sample is empty")
    _, sigma0 = robust_location_scale(x)
    j = list(model.param_names).index("sigma") if "sigma" in model.param_names else model.dim - 1
    rows, summary = [], []
    for a, l in alpha_lambda_list:
        tp = TuningPair(a, l)
        found = {"msde_beran": [], "msde_star": []}
        for h0 in h0_list:
            kernel = KernelSpec("gaussian", h0 * sigma0)
            for method, fn in (("msde_beran", fit_msde_beran), ("msde_star", fit_msde_star)):
                res = fn(x, model, FitConfig(method=method, tuning=tp, kernel=kernel, quad=quad))
                s = float(res.theta_hat[j])
                found[method].append(s)
                rows.append({"alpha": a, "lambda": l, "method": method, "h0": h0,
                             "sigma_hat": s, "converged": res.converged})
        r_m = float(np.ptp(found["msde_beran"]))
        r_s = float(np.ptp(found["msde_star"]))
        summary.append({"alpha": a, "lambda": l, "range_msde": r_m, "range_msde_star": r_s,
                        "ratio": (r_m / r_s) if r_s > 0 else None})
    return BandwidthStability(rows, summary)
