"""Influence functions, asymptotic covariance and kernel transparency.

Per-point integrals over ``x`` (``u^{a*}(y)`` and friends) use the adaptive
engine on ``y +- 8h``.  Expectations over the model (``E_theta[...]``) use a
fixed composite Gauss-Legendre rule on the model's truncation interval, since
their integrands are themselves adaptive quadrature results and a fixed outer
rule does not chase the inner rule's rounding noise.

``kernel=None`` everywhere means no smoothing (``h = 0``).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .divergence import RATIO_MAX, RATIO_MIN, LIMIT_TOL, DensityEvaluator, TuningPair
from .exceptions import AssumptionViolationError, DegenerateGridError, InvalidInputError
from .models import ParametricModel
from .quadrature import DEFAULT_QUAD, QuadratureSpec, gauss_legendre_panels, integrate, integrate_batch
from .smoothing import (KERNEL_REACH, KernelSpec, SmoothedDensity, smoothed_hessian_raw,
                        smoothed_logpdf, smoothed_score_raw)

# tighter inner tolerance for integrals that are differenced in theta
_FD_QUAD = QuadratureSpec(abs_tol=1e-13, rel_tol=1e-12)
_POLE_TOL = 1e-12
# expectations of score moments need more tail than the density alone
_MOMENT_MASS = 1e-6


def _moment_bounds(model, theta, quad):
    return model.bounds(theta, quad.truncation_mass * _MOMENT_MASS)


# --------------------------------------------------------------------------
# building blocks

def _smoothed(model, theta, kernel, x, quad, hessian=False):
    lf = smoothed_logpdf(model, theta, kernel, x, quad)
    u = smoothed_score_raw(model, theta, kernel, x, quad=quad)
    du = smoothed_hessian_raw(model, theta, kernel, x, quad=quad) if hessian else None
    return lf, u, du


def _model_scale(model, theta, kernel):
    s = float(model.feature_scale(theta))
    return s if kernel is None else float(np.hypot(s, kernel.bandwidth))


def _per_y(model, theta, kernel, y, quad, fn, hessian=False):
    """``int fn(log f*, u~, grad u~, log W(x, y)) dx`` for each ``y``; values last axis."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    h = kernel.bandwidth
    width = 2 * KERNEL_REACH * h
    panels = int(np.clip(2 * np.ceil(width / min(h, _model_scale(model, theta, kernel))), 16, 4096))

    def integrand(x, k):
        lf, u, du = _smoothed(model, theta, kernel, x, quad, hessian)
        return fn(lf, u, du, kernel.log_weight(x, y[k]))

    out = integrate_batch(integrand, y - KERNEL_REACH * h, y + KERNEL_REACH * h, quad=quad,
                          panels=panels)
    return np.moveaxis(out, 0, -1)


def _over_model(model, theta, kernel, quad, fn, hessian=False, smoothed_mass=True):
    """``int fn(log f*, u~, grad u~) dx`` over the (smoothed) model's support."""
    lo, hi = _moment_bounds(model, theta, quad)
    if kernel is not None and smoothed_mass:
        z = norm.isf(quad.truncation_mass * _MOMENT_MASS) * kernel.bandwidth
        lo, hi = lo - z, hi + z
    panels = int(np.clip(np.ceil((hi - lo) / _model_scale(model, theta, kernel)), 16, 4096))

    def integrand(x):
        lf, u, du = _smoothed(model, theta, kernel, x, quad, hessian)
        return fn(lf, u, du)

    return integrate(integrand, lo, hi, quad=quad, panels=panels)


def _expectation(model, theta, fn, quad, width_factor=0.25):
    """``E_theta[fn(X)]`` with a fixed Gauss-Legendre rule; ``fn`` maps (N,) -> (..., N)."""
    lo, hi = _moment_bounds(model, theta, quad)
    nodes, w = gauss_legendre_panels(lo, hi, width_factor * model.feature_scale(theta), order=10)
    vals = fn(nodes)
    return vals @ (w * model.pdf(theta, nodes))


def _sym(M, name):
    M = np.asarray(M, dtype=float)
    asym = float(np.max(np.abs(M - M.T))) if M.ndim == 2 else 0.0
    return 0.5 * (M + M.T), asym


def _check_pd(J, name="J*"):
    try:
        np.linalg.cholesky(J)
    except np.linalg.LinAlgError:
        raise AssumptionViolationError(f"{name} is not positive definite: {J.tolist()}") from None


# --------------------------------------------------------------------------
# u^{a*} family

def u_alpha_star(model: ParametricModel, theta, kernel: KernelSpec | None, alpha: float, y, *,
                 quad: QuadratureSpec = DEFAULT_QUAD, power: float | None = None):
    """``u^{a*}(y) = int u~(x) f*(x)^a W(x, y, h) dx``, shape ``(p, N)``.

    ``power`` replaces the exponent ``a`` (e.g. ``a - 1``).  With
    ``kernel=None`` this is ``u(y) f(y)^a``.
    """
    theta = model.check_theta(theta)
    a = alpha if power is None else power
    if kernel is None:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return model.score(theta, y) * np.exp(a * model.logpdf(theta, y))
    return _per_y(model, theta, kernel, y, quad,
                  lambda lf, u, du, lw: u * np.exp(a * lf + lw))


def u_2alpha_star(model: ParametricModel, theta, kernel: KernelSpec | None, alpha: float, y, *,
                  quad: QuadratureSpec = DEFAULT_QUAD):
    """``int u~ u~^T f*^a W(x, y, h) dx``, shape ``(p, p, N)``."""
    theta = model.check_theta(theta)
    if kernel is None:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        u = model.score(theta, y)
        return u[:, None] * u[None, :] * np.exp(alpha * model.logpdf(theta, y))
    out = _per_y(model, theta, kernel, y, quad,
                 lambda lf, u, du, lw: u[:, None] * u[None, :] * np.exp(alpha * lf + lw))
    return 0.5 * (out + out.swapaxes(0, 1))


def u_1alpha_star(model: ParametricModel, theta, kernel: KernelSpec | None, alpha: float, y, *,
                  quad: QuadratureSpec = DEFAULT_QUAD):
    """``int grad(u~) f*^a W(x, y, h) dx``, shape ``(p, p, N)``."""
    theta = model.check_theta(theta)
    if kernel is None:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return model.score_hessian(theta, y) * np.exp(alpha * model.logpdf(theta, y))
    return _per_y(model, theta, kernel, y, quad,
                  lambda lf, u, du, lw: du * np.exp(alpha * lf + lw), hessian=True)


def expected_u_alpha_star(model: ParametricModel, theta, kernel: KernelSpec | None, alpha: float, *,
                          quad: QuadratureSpec = DEFAULT_QUAD):
    """``E_theta[u^{a*}(X)] = int u~ f*^(1+a)``."""
    theta = model.check_theta(theta)
    return _over_model(model, theta, kernel, quad, lambda lf, u, du: u * np.exp((1 + alpha) * lf))


# --------------------------------------------------------------------------
# J* and V* at the model

J_FORMS = ("single", "expectation", "hessian")


def j_star_model(model: ParametricModel, theta, kernel: KernelSpec | None, alpha: float, *,
                 quad: QuadratureSpec = DEFAULT_QUAD, form: str = "single", check: bool = True):
    """``J*`` at the model.

    ``form`` selects the computation:

    * ``single``: ``int u~ u~^T f*^(1+a)``;
    * ``expectation``: ``E_theta[u^{2a*}(X)]`` (nested quadrature);
    * ``hessian``: ``E_theta[-grad u^{a*}(X)]`` with central differences in theta.

    The first two are equal for every model.  The third equals them only when
    ``int u~ f*^(1+a)`` does not depend on theta (location parameters, or
    ``a = 0``); see :func:`j_star_hessian_correction`.
    """
    theta = model.check_theta(theta)
    if form == "single":
        J = _over_model(model, theta, kernel, quad,
                        lambda lf, u, du: u[:, None] * u[None, :] * np.exp((1 + alpha) * lf))
    elif form == "expectation":
        J = _expectation(model, theta, lambda y: u_2alpha_star(model, theta, kernel, alpha, y,
                                                               quad=quad), quad)
    elif form == "hessian":
        p = model.dim
        step = np.maximum(1e-4, 1e-4 * np.abs(theta))

        def neg_grad(y):
            out = np.empty((p, p, y.size))
            for j in range(p):
                e = np.zeros(p)
                e[j] = step[j]
                out[:, j] = -(u_alpha_star(model, theta + e, kernel, alpha, y, quad=_FD_QUAD)
                              - u_alpha_star(model, theta - e, kernel, alpha, y, quad=_FD_QUAD)) / (2 * step[j])
            return out

        J = _expectation(model, theta, neg_grad, quad)
    else:
        raise InvalidInputError(f"unknown J* form {form!r}")
    J, _ = _sym(np.atleast_2d(J), "J*")
    if check:
        _check_pd(J)
    return J


def j_star_hessian_correction(model: ParametricModel, theta, kernel: KernelSpec | None, alpha: float,
                              *, quad: QuadratureSpec = DEFAULT_QUAD):
    """``grad_theta int u~ f*^(1+a)``: the term separating the ``hessian`` form from ``J*``.

    ``E[-grad u^{a*}(X)] + grad_theta E_theta[u^{a*}] = J*`` holds for every
    model; the correction vanishes for location parameters.
    """
    theta = model.check_theta(theta)
    p = model.dim
    step = np.maximum(1e-4, 1e-4 * np.abs(theta))
    out = np.empty((p, p))
    for j in range(p):
        e = np.zeros(p)
        e[j] = step[j]
        out[:, j] = (expected_u_alpha_star(model, theta + e, kernel, alpha, quad=_FD_QUAD)
                     - expected_u_alpha_star(model, theta - e, kernel, alpha, quad=_FD_QUAD)) / (2 * step[j])
    return out


def j_star_forms(model, theta, kernel, alpha, *, quad=DEFAULT_QUAD) -> dict:
    return {f: j_star_model(model, theta, kernel, alpha, quad=quad, form=f, check=False)
            for f in J_FORMS}


def v_star_model(model: ParametricModel, theta, kernel: KernelSpec | None, alpha: float, *,
                 quad: QuadratureSpec = DEFAULT_QUAD):
    """``V* = Var_theta[u^{a*}(X)]`` by nested quadrature."""
    theta = model.check_theta(theta)

    def moments(y):
        u = u_alpha_star(model, theta, kernel, alpha, y, quad=quad)
        return np.concatenate([u, (u[:, None] * u[None, :]).reshape(-1, y.size)])

    p = model.dim
    m = _expectation(model, theta, moments, quad)
    mean, second = m[:p], m[p:].reshape(p, p)
    V, _ = _sym(second - np.outer(mean, mean), "V*")
    return V


@dataclass
class AsymptoticCov:
    J_star: np.ndarray
    V_star: np.ndarray
    sandwich: np.ndarray
    asymmetry: float = 0.0

    def as_dict(self) -> dict:
        return {"J_star": self.J_star.tolist(), "V_star": self.V_star.tolist(),
                "sandwich": self.sandwich.tolist()}


def _sandwich(J, V, name="J*"):
    _check_pd(J, name)
    Jinv = np.linalg.inv(J)
    S, asym = _sym(Jinv @ V @ Jinv, "sandwich")
    return S, asym


def sandwich_cov(model: ParametricModel, theta, kernel: KernelSpec | None, alpha: float, *,
                 quad: QuadratureSpec = DEFAULT_QUAD) -> AsymptoticCov:
    """``J*^{-1} V* J*^{-1}`` at the model; free of lambda."""
    J = j_star_model(model, theta, kernel, alpha, quad=quad)
    V = v_star_model(model, theta, kernel, alpha, quad=quad)
    S, asym = _sandwich(J, V)
    return AsymptoticCov(J, V, S, asym)


# --------------------------------------------------------------------------
# influence functions

@dataclass
class IFReport:
    y_grid: np.ndarray
    if_values: np.ndarray                # (N, p)
    second_order: np.ndarray | None = None
    at_model: bool = True
    param_names: tuple = ()
    extra: dict = field(default_factory=dict)

    def to_csv(self, path=None) -> str:
        """CSV with columns ``y``, ``IF_<param>``..., and ``T2`` when present.

        Undefined second-order values are written as empty fields.
        """
        names = self.param_names or tuple(f"theta{j}" for j in range(self.if_values.shape[1]))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["y"] + [f"IF_{n}" for n in names]
        if self.second_order is not None:
            header.append("T2")
        w.writerow(header)
        for i, y in enumerate(self.y_grid):
            row = [_g6(y)] + [_g6(v) for v in self.if_values[i]]
            if self.second_order is not None:
                v = self.second_order[i]
                row.append("" if not np.isfinite(v) else _g6(v))
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def _g6(v):
    return f"{float(v):.6g}"


def influence_function_model(model: ParametricModel, theta, kernel: KernelSpec | None,
                             tuning: TuningPair, y_grid, *,
                             quad: QuadratureSpec = DEFAULT_QUAD) -> IFReport:
    """``T'(y) = J*^{-1} (u^{a*}(y) - E u^{a*})`` at the model.

    Only ``tuning.alpha`` is read: the first-order influence at the model does
    not depend on lambda.
    """
    alpha = tuning.alpha
    theta = model.check_theta(theta)
    y = np.atleast_1d(np.asarray(y_grid, dtype=float))
    J = j_star_model(model, theta, kernel, alpha, quad=quad)
    E = expected_u_alpha_star(model, theta, kernel, alpha, quad=quad)
    u = u_alpha_star(model, theta, kernel, alpha, y, quad=quad)
    T1 = np.linalg.solve(J, u - E[:, None]).T
    return IFReport(y, T1, at_model=True, param_names=tuple(model.param_names),
                    extra={"J_star": J, "E_u_alpha_star": E})


def _log_ratio(log_g, log_f):
    return np.clip(log_g - log_f, np.log(RATIO_MIN), np.log(RATIO_MAX))


def _g_matrices(model, theta, kernel, tuning, gstar, quad):
    """``J*_g / A`` and ``int f^B g^A u~`` (A-free forms), by quadrature over g* and f*."""
    A, B, alpha = tuning.A, tuning.B, tuning.alpha
    lo1, hi1 = gstar.bounds(quad.truncation_mass)
    lo2, hi2 = model.bounds(theta, quad.truncation_mass)
    if kernel is not None:
        z = norm.isf(quad.truncation_mass) * kernel.bandwidth
        lo2, hi2 = lo2 - z, hi2 + z
    lo, hi = min(lo1, lo2), max(hi1, hi2)
    scale = min(gstar.feature_scale, _model_scale(model, theta, kernel))
    panels = int(np.clip(np.ceil((hi - lo) / scale), 16, 4096))
    p = model.dim

    def integrand(x):
        lf, u, du = _smoothed(model, theta, kernel, x, quad, hessian=True)
        lg = gstar.logpdf(x)
        ell = _log_ratio(lg, lf)
        uu = u[:, None] * u[None, :]
        # (g^A - f^A)/A, with the A -> 0 limit log(g/f)
        ga_fa = ell if abs(A) <= LIMIT_TOL else np.expm1(A * ell) / A
        jg = uu * np.exp((1 + alpha) * lf) + (-du - B * uu) * np.exp((1 + alpha) * lf) * ga_fa
        ng = u * np.exp((1 + alpha) * lf + A * ell)
        return np.concatenate([jg.reshape(p * p, -1), ng])

    out = integrate(integrand, lo, hi, quad=quad, panels=panels)
    Jg, _ = _sym(out[:p * p].reshape(p, p), "J*_g")
    return Jg, out[p * p:]


def _inner_g(model, theta, kernel, tuning, gstar, y, quad):
    """``int W(x, y) f*^B g*^(A-1) u~ dx`` (clamped ratio) for each y; shape (p, N)."""
    alpha, A = tuning.alpha, tuning.A

    y = np.atleast_1d(np.asarray(y, dtype=float))
    h = kernel.bandwidth
    panels = int(np.clip(2 * np.ceil(2 * KERNEL_REACH * h / min(h, gstar.feature_scale,
                                                                   _model_scale(model, theta, kernel))),
                         16, 4096))

    def integrand(x, k):
        lf = smoothed_logpdf(model, theta, kernel, x, quad)
        u = smoothed_score_raw(model, theta, kernel, x, quad=quad)
        ell = _log_ratio(gstar.logpdf(x), lf)
        return u * np.exp(alpha * lf + (A - 1) * ell + kernel.log_weight(x, y[k]))

    out = integrate_batch(integrand, y - KERNEL_REACH * h, y + KERNEL_REACH * h, quad=quad,
                          panels=panels)
    return out.T


def best_fitting_parameter(model: ParametricModel, g: DensityEvaluator, kernel: KernelSpec,
                           tuning: TuningPair, theta0=None, *, quad: QuadratureSpec = DEFAULT_QUAD):
    """``theta^g``: the minimiser of ``S(g*, f*_theta)``."""
    from .estimator import fit_functional

    gstar = g if isinstance(g, SmoothedDensity) else SmoothedDensity(g, kernel, quad=quad)
    if theta0 is None:
        theta0 = _moment_start(model, g, quad)
    res = fit_functional(gstar, model, tuning, kernel, theta0, quad=quad, param_tol=1e-10,
                         grad_tol=1e-10)
    if not res.converged:
        raise AssumptionViolationError(
            f"best-fitting parameter did not converge (equation norm {res.estimating_eq_norm:.3g})")
    return res.theta_hat, gstar


def _moment_start(model, g, quad):
    lo, hi = g.bounds(quad.truncation_mass)
    nodes, w = gauss_legendre_panels(lo, hi, 0.25 * g.feature_scale, order=10)
    pw = w * g.pdf(nodes)
    # median and MAD of g from its distribution function
    cdf = np.cumsum(pw)
    cdf /= cdf[-1]
    med = float(np.interp(0.5, cdf, nodes))
    dev = np.abs(nodes - med)
    order = np.argsort(dev)
    mad = float(np.interp(0.5, np.cumsum(pw[order]) / pw.sum(), dev[order]))
    sample = np.array([med - mad / 0.6745, med, med + mad / 0.6745])
    return model.initial_theta(sample, "robust")


@dataclass
class GeneralIF:
    report: IFReport
    theta_g: np.ndarray
    J_g: np.ndarray
    N_g: np.ndarray          # (N, p)


def influence_function_general(model: ParametricModel, g: DensityEvaluator, kernel: KernelSpec,
                               tuning: TuningPair, y_grid, *, theta0=None,
                               quad: QuadratureSpec = DEFAULT_QUAD) -> GeneralIF:
    """``T'(y) = J*_g^{-1} N*_g(y)`` at a general true density ``g``.

    ``N*_g`` and ``J*_g`` are both carried divided by ``A`` so the ``A = 0``
    case is handled by its logarithmic limit; the ratio is unaffected.
    """
    theta_g, gstar = best_fitting_parameter(model, g, kernel, tuning, theta0, quad=quad)
    y = np.atleast_1d(np.asarray(y_grid, dtype=float))
    Jg_A, ng_bar = _g_matrices(model, theta_g, kernel, tuning, gstar, quad)
    inner = _inner_g(model, theta_g, kernel, tuning, gstar, y, quad)
    Ng_A = inner - ng_bar[:, None]
    try:
        T1 = np.linalg.solve(Jg_A, Ng_A).T
    except np.linalg.LinAlgError:
        raise AssumptionViolationError("J*_g is singular") from None
    rep = IFReport(y, T1, at_model=False, param_names=tuple(model.param_names),
                   extra={"theta_g": theta_g})
    return GeneralIF(rep, theta_g, tuning.A * Jg_A, tuning.A * Ng_A.T)


def v_star_general(model: ParametricModel, g: DensityEvaluator, kernel: KernelSpec,
                   tuning: TuningPair, *, theta=None, quad: QuadratureSpec = DEFAULT_QUAD):
    """``Var_g[int W(x, X) K'(delta_g(x)) f*^a u~ dx]`` at ``theta^g``."""
    if theta is None:
        theta, gstar = best_fitting_parameter(model, g, kernel, tuning, quad=quad)
    else:
        gstar = SmoothedDensity(g, kernel, quad=quad)
    lo, hi = g.bounds(quad.truncation_mass)
    nodes, w = gauss_legendre_panels(lo, hi, 0.25 * min(g.feature_scale, kernel.bandwidth * 4),
                                     order=10)
    vals = _inner_g(model, theta, kernel, tuning, gstar, nodes, quad)
    pw = w * g.pdf(nodes)
    mean = vals @ pw
    second = (vals * pw) @ vals.T
    V, _ = _sym(second - np.outer(mean, mean), "V*_g")
    return V


def sandwich_cov_general(model: ParametricModel, g: DensityEvaluator, kernel: KernelSpec,
                         tuning: TuningPair, *, quad: QuadratureSpec = DEFAULT_QUAD) -> AsymptoticCov:
    """Sandwich covariance at a general ``g``.

    The bread is ``J*_g / A``, the derivative of the estimating equation in
    the same normalisation as ``V*_g``, so that at the model it reduces to
    ``J*^{-1} V* J*^{-1}``.
    """
    theta, gstar = best_fitting_parameter(model, g, kernel, tuning, quad=quad)
    Jg_A, _ = _g_matrices(model, theta, kernel, tuning, gstar, quad)
    V = v_star_general(model, g, kernel, tuning, theta=theta, quad=quad)
    S, asym = _sandwich(Jg_A, V, "J*_g")
    return AsymptoticCov(Jg_A, V, S, asym)


# --------------------------------------------------------------------------
# second order

@dataclass
class SecondOrderReport:
    y_grid: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    m1: np.ndarray
    m2: np.ndarray           # NaN where the first-order term vanishes
    J: float
    D1: float
    D2: float
    E: float
    pole: np.ndarray
    t2_regular: np.ndarray | None = None   # finite at poles too

    def as_if_report(self, param_names=("theta",)) -> IFReport:
        return IFReport(self.y_grid, self.t1[:, None], self.t2, True, tuple(param_names))


def second_order_if(model: ParametricModel, theta, kernel: KernelSpec, tuning: TuningPair, y_grid,
                    *, quad: QuadratureSpec = DEFAULT_QUAD) -> SecondOrderReport:
    """Second-order influence ``T''(y)`` of a scalar parameter at the model.

    Obtained by differentiating the estimating equation twice along the
    contamination path ``(1 - e) f* + e W(., y)``:

    ``T'' = (P_tt T'^2 + 2 P_te T' + P_ee) / J*`` with

    * ``P_tt = -[(B + 1 + a) D1 + 3 D2]``,
    * ``P_te = B (u^{2a*}(y) - J*) + u^{1a*}(y) - int grad(u~) f*^(1+a)``,
    * ``P_ee = (A - 1) [Q(y) - 2 u^{a*}(y) + E u^{a*}]``,
      ``Q(y) = int u~ f*^(a-1) W(x, y)^2 dx``,

    ``D1 = int u~^3 f*^(1+a)`` and ``D2 = int u~ grad(u~) f*^(1+a)``.  Collecting
    the terms in ``lambda (1 - a) = A - 1`` gives
    ``T'' = T' J*^{-1} [m1 + lambda (1 - a) m2]``; ``m2`` has ``T'`` in a
    denominator and is reported as NaN where ``|u^{a*}(y) - E| < 1e-12``.
    ``T''`` itself is always finite.
    """
    if model.dim != 1:
        raise InvalidInputError("second-order influence is implemented for scalar parameters")
    theta = model.check_theta(theta)
    a = tuning.alpha
    L = tuning.A - 1.0
    y = np.atleast_1d(np.asarray(y_grid, dtype=float))

    def over(lf, u, du):
        w = np.exp((1 + a) * lf)
        u0, d0 = u[0], du[0, 0]
        return np.stack([u0 * u0 * w, u0 ** 3 * w, u0 * d0 * w, d0 * w, u0 * w])

    J, D1, D2, Idu, E = _over_model(model, theta, kernel, quad, over, hessian=True)

    def per_y(lf, u, du, lw):
        u0, d0 = u[0], du[0, 0]
        wa = np.exp(a * lf + lw)
        return np.stack([u0 * wa, u0 * u0 * wa, d0 * wa, u0 * np.exp((a - 1) * lf + 2 * lw)])

    ua, u2, u1, Q = _per_y(model, theta, kernel, y, quad, per_y, hessian=True)
    d = ua - E
    t1 = d / J
    # lambda-free and lambda-linear parts (L = lambda (1 - alpha))
    p_tt0 = -((1 + 2 * a) * D1 + 3 * D2)
    p_te0 = a * (u2 - J) + u1 - Idu
    m1 = p_tt0 * t1 + 2 * p_te0
    ee_l = Q - 2 * ua + E
    lin = D1 * t1 * t1 - 2 * (u2 - J) * t1 + ee_l
    t2_regular = (t1 * m1 + L * lin) / J
    pole = np.abs(d) < _POLE_TOL
    with np.errstate(divide="ignore", invalid="ignore"):
        m2 = np.where(pole, np.nan, lin / np.where(pole, 1.0, t1))
    t2 = np.where(pole & (L != 0.0), np.nan, t2_regular)
    return SecondOrderReport(y, t1, t2, m1, m2, float(J), float(D1), float(D2), float(E), pole,
                             t2_regular)


# --------------------------------------------------------------------------
# normal-mean closed forms and the zeta factors

def normal_mean_closed_forms(sigma: float, h: float, alpha: float, theta: float, y) -> dict:
    """Closed forms for ``N(theta, sigma^2)`` with known sigma and a gaussian kernel.

    With ``s2 = sigma^2 + h^2``, ``t2 = alpha h^2 + s2`` and ``d = y - theta``:
    ``u^{a*} = C d e``, ``u^{2a*} = C (h^2/s2 + d^2/t2) e`` and
    ``u^{1a*} = -C (alpha h^2/s2 + 1) e`` where ``e = exp(-alpha d^2 / (2 t2))``
    and ``C = (2 pi)^(-a/2) s2^((1-a)/2) t2^(-3/2)``;
    ``J* = (2 pi)^(-a/2) (1+a)^(-3/2) s2^(-(a+2)/2)``.
    """
    y = np.asarray(y, dtype=float)
    s2 = sigma**2 + h**2
    t2 = alpha * h**2 + s2
    d = y - theta
    C = (2 * np.pi) ** (-alpha / 2) * s2 ** (-(alpha - 1) / 2) * t2 ** (-1.5)
    e = np.exp(-alpha * d * d / (2 * t2))
    return {
        "u_alpha": C * d * e,
        "u_2alpha": C * (h**2 / s2 + d * d / t2) * e,
        "u_1alpha": -C * (alpha * h**2 / s2 + 1) * e,
        "j_star": (2 * np.pi) ** (-alpha / 2) * (1 + alpha) ** (-1.5) * s2 ** (-(alpha + 2) / 2),
        "C": C,
    }


def zeta_alpha_h(alpha: float, sigma: float, h: float) -> float:
    """Variance inflation of the normal-mean MSDE* relative to sigma^2."""
    a1 = 1 + alpha
    s2 = sigma**2 + h**2
    num = a1**2 * s2**2
    den = (a1 * h**2 + sigma**2) * (a1 * h**2 + (1 + 2 * alpha) * sigma**2)
    return float((num / den) ** 1.5)


def zeta_alpha(alpha: float) -> float:
    """The ``h -> 0`` limit ``(1+a)^3 (1+2a)^(-3/2)``."""
    return float((1 + alpha) ** 3 * (1 + 2 * alpha) ** -1.5)


# --------------------------------------------------------------------------
# transparency

@dataclass
class TransparencyReport:
    M: np.ndarray
    L: np.ndarray
    max_residual: float
    grid: np.ndarray
    transparent: bool


def default_transparency_grid(model, theta, n=25):
    lo, hi = model.bounds(theta, norm.sf(5.0))
    return np.linspace(lo, hi, n)


def transparency_residual(model: ParametricModel, theta, kernel: KernelSpec, alpha: float, *,
                          quad: QuadratureSpec = DEFAULT_QUAD, grid=None,
                          threshold: float = 1e-6) -> TransparencyReport:
    """Least-squares fit of ``u^{a*}(y) = M f^a(y) u(y) + L`` over a grid.

    The default grid is 25 equispaced points over the model centre +- 5 sd.
    The kernel is declared transparent when the worst residual is at most
    ``threshold``.
    """
    theta = model.check_theta(theta)
    p = model.dim
    y = default_transparency_grid(model, theta) if grid is None else np.asarray(grid, dtype=float)
    if y.size < 2 * p + 2:
        raise DegenerateGridError(f"transparency grid needs at least {2 * p + 2} points")
    lhs = u_alpha_star(model, theta, kernel, alpha, y, quad=quad).T            # (N, p)
    z = (model.score(theta, y) * np.exp(alpha * model.logpdf(theta, y))).T      # (N, p)
    X = np.column_stack([z, np.ones(y.size)])
    coef, _, rank, sv = np.linalg.lstsq(X, lhs, rcond=None)
    if rank < p + 1 or sv[-1] <= 1e-12 * sv[0]:
        raise DegenerateGridError("transparency regression is rank deficient on this grid")
    M = coef[:p].T
    L = coef[p]
    resid = float(np.max(np.abs(lhs - X @ coef)))
    return TransparencyReport(M, L, resid, y, resid <= threshold)
