"""Data-driven choice of ``(alpha, lambda)`` by minimizing an estimated summed MSE."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import sandwich_cov, u_alpha_star, j_star_model
from .divergence import TuningPair
from .estimator import FitConfig, fit_mdpde, fit_msde_star
from .exceptions import InvalidInputError, SdiveError, TuningAbortError
from .models import ParametricModel
from .quadrature import DEFAULT_QUAD, QuadratureSpec
from .smoothing import BandwidthRule, KernelSpec

DEFAULT_ALPHA_GRID = (0.0, 0.1, 0.15, 0.2, 0.25, 0.3, 0.5, 0.75, 1.0)
DEFAULT_LAMBDA_GRID = (-1.0, -0.7, -0.5, -0.4, -0.3, 0.0, 0.5, 1.0)


@dataclass(frozen=True)
class TuningSearchConfig:
    """Grid and pilot for :func:`select_tuning`.

    ``pilot`` is ``"mdpde_alpha_1"`` or an explicit parameter vector.
    ``kernel`` fixes ``h``; otherwise ``bandwidth`` is resolved on the sample.
    ``variance`` is ``"model"`` (``V*`` under the fitted model) or
    ``"empirical"`` (sample covariance of ``u^{alpha*}(X_i)`` at the fit).
    """

    alpha_grid: tuple = DEFAULT_ALPHA_GRID
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    pilot: object = "mdpde_alpha_1"
    kernel: KernelSpec | None = None
    bandwidth: BandwidthRule = field(default_factory=BandwidthRule)
    variance: str = "model"
    quad: QuadratureSpec = DEFAULT_QUAD

    def __post_init__(self):
        if len(self.alpha_grid) == 0 or len(self.lambda_grid) == 0:
            raise InvalidInputError("alpha and lambda grids must be nonempty")
        if any(not (0.0 <= a <= 1.0) for a in self.alpha_grid):
            raise InvalidInputError("alpha values must lie in [0, 1]")
        if self.variance not in ("model", "empirical"):
            raise InvalidInputError("variance must be 'model' or 'empirical'")
        if isinstance(self.pilot, str) and self.pilot != "mdpde_alpha_1":
            raise InvalidInputError(f"unknown pilot {self.pilot!r}")


@dataclass
class TuningCell:
    alpha: float
    lam: float
    theta_hat: np.ndarray | None
    bias2: float
    var: float
    score: float
    failed: bool = False
    message: str = ""


@dataclass
class TuningResult:
    best: TuningPair
    best_cell: TuningCell
    surface: list
    pilot: np.ndarray
    bandwidth: float

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alpha", "lambda", "bias2", "var", "score"])
        for c in self.surface:
            w.writerow([_g(c.alpha), _g(c.lam), _g(c.bias2), _g(c.var), _g(c.score)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def _g(v):
    v = float(v)
    return "" if not np.isfinite(v) else f"{v:.6g}"


def _pilot(x, model, config):
    if not isinstance(config.pilot, str):
        return model.check_theta(np.asarray(config.pilot, dtype=float))
    try:
        res = fit_mdpde(x, model, FitConfig(method="mdpde", tuning=TuningPair(1.0, 0.0),
                                            quad=config.quad))
    except SdiveError as exc:
        raise TuningAbortError(f"pilot fit failed: {exc}") from exc
    if not res.converged:
        raise TuningAbortError(f"pilot fit did not converge: {res.message}")
    return res.theta_hat


def _variance(x, model, theta, kernel, alpha, config):
    n = x.size
    if config.variance == "model":
        return float(np.trace(sandwich_cov(model, theta, kernel, alpha, quad=config.quad).sandwich)) / n
    J = j_star_model(model, theta, kernel, alpha, quad=config.quad)
    U = u_alpha_star(model, theta, kernel, alpha, x, quad=config.quad)
    V = np.atleast_2d(np.cov(U, ddof=1))
    Ji = np.linalg.inv(J)
    return float(np.trace(Ji @ V @ Ji)) / n


def select_tuning(sample, model: ParametricModel, config: TuningSearchConfig | None = None
                  ) -> TuningResult:
    """Pick the grid cell minimizing ``|theta_hat - theta_P|^2 + trace(sandwich)/n``.

    Each cell is fitted by MSDE*; the sandwich is evaluated at the fitted
    parameter with the same bandwidth.  Ties go to the smaller ``alpha``,
    then to the smaller ``|lambda|``.  Failed cells get NaN scores.
    """
    config = config or TuningSearchConfig()
    x = np.asarray(sample, dtype=float).ravel()
    if x.size < 10:
        raise InvalidInputError("tuning needs at least 10 observations")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("sample contains non-finite values")
    theta_p = _pilot(x, model, config)
    kernel = config.kernel or KernelSpec("gaussian", config.bandwidth.resolve(x))

    surface = []
    for lam in config.lambda_grid:
        for a in config.alpha_grid:
            a, lam = float(a), float(lam)
            try:
                res = fit_msde_star(x, model, FitConfig(method="msde_star", tuning=TuningPair(a, lam),
                                                        kernel=kernel, quad=config.quad))
                if not res.converged:
                    raise SdiveError(res.message or "fit did not converge")
                d = res.theta_hat - theta_p
                bias2 = float(d @ d)
                var = _variance(x, model, res.theta_hat, kernel, a, config)
                surface.append(TuningCell(a, lam, res.theta_hat, bias2, var, bias2 + var))
            except (SdiveError, np.linalg.LinAlgError) as exc:
                nan = float("nan")
                surface.append(TuningCell(a, lam, None, nan, nan, nan, True, str(exc)))

    ok = [c for c in surface if not c.failed]
    if not ok:
        raise TuningAbortError("every grid cell failed")
    best = min(ok, key=lambda c: (c.score, c.alpha, abs(c.lam)))
    # exact ties on score are settled by the efficiency preference
    return TuningResult(TuningPair(best.alpha, best.lam), best, surface, theta_p, kernel.bandwidth)
