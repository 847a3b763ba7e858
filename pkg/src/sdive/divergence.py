"""The S-divergence family, the Pearson residual and the K-function."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .exceptions import DomainError, InvalidInputError
from .quadrature import DEFAULT_QUAD, QuadratureSpec, integrate

# |A| or |B| at or below this switches to the logarithmic limit forms.
LIMIT_TOL = 1e-8
RATIO_MIN = 1e-10
RATIO_MAX = 1e10
# exponent cap for f^B g^A evaluated in log space
_EXP_CAP = 700.0


@dataclass(frozen=True)
class TuningPair:
    """Divergence parameters ``(alpha, lam)`` and the derived exponents.

    ``A = 1 + lam (1 - alpha)`` and ``B = alpha - lam (1 - alpha)``.
    """

    alpha: float
    lam: float
    A: float = field(init=False)
    B: float = field(init=False)

    def __post_init__(self):
        alpha, lam = float(self.alpha), float(self.lam)
        if not (np.isfinite(alpha) and np.isfinite(lam)):
            raise InvalidInputError("alpha and lambda must be finite")
        if alpha < 0:
            raise InvalidInputError(f"alpha must be nonnegative, got {alpha}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "A", 1.0 + lam * (1.0 - alpha))
        object.__setattr__(self, "B", alpha - lam * (1.0 - alpha))

    @property
    def a_is_zero(self) -> bool:
        return abs(self.A) <= LIMIT_TOL

    @property
    def b_is_zero(self) -> bool:
        return abs(self.B) <= LIMIT_TOL


class DensityEvaluator:
    """A univariate density with enough structure to be integrated.

    Subclasses provide :meth:`pdf`; :meth:`logpdf` should be overridden when
    the log can be computed without underflow.  :meth:`bounds` returns an
    interval outside of which at most ``mass`` probability lies on each side.
    ``feature_scale`` is the width of the narrowest feature and drives the
    initial quadrature partition.
    """

    support = (-np.inf, np.inf)
    feature_scale = 1.0

    def pdf(self, x):
        raise NotImplementedError

    def logpdf(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x))

    def bounds(self, mass):
        raise NotImplementedError

    def breakpoints(self):
        return None

    def __call__(self, x):
        return self.pdf(x)


class NormalDensity(DensityEvaluator):
    def __init__(self, mu=0.0, sigma=1.0):
        if not sigma > 0:
            raise InvalidInputError("sigma must be positive")
        self.mu = float(mu)
        self.sigma = float(sigma)
        self.feature_scale = self.sigma

    def pdf(self, x):
        return norm.pdf(x, self.mu, self.sigma)

    def logpdf(self, x):
        return norm.logpdf(x, self.mu, self.sigma)

    def bounds(self, mass):
        z = norm.isf(mass)
        return self.mu - z * self.sigma, self.mu + z * self.sigma

    def __repr__(self):
        return f"NormalDensity(mu={self.mu!r}, sigma={self.sigma!r})"


class NormalMixtureDensity(DensityEvaluator):
    """Finite mixture of normal densities."""

    def __init__(self, weights, mus, sigmas):
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0):
            raise InvalidInputError("mixture weights must be nonnegative and sum to one")
        self.weights = w
        self.mus = np.asarray(mus, dtype=float)
        self.sigmas = np.asarray(sigmas, dtype=float)
        if np.any(self.sigmas <= 0):
            raise InvalidInputError("component sigmas must be positive")
        self.feature_scale = float(self.sigmas.min())

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        comp = norm.logpdf(x[..., None], self.mus, self.sigmas)
        with np.errstate(divide="ignore"):
            return logsumexp(comp, axis=-1, b=self.weights)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def bounds(self, mass):
        z = norm.isf(mass)
        keep = self.weights > 0
        return (float(np.min(self.mus[keep] - z * self.sigmas[keep])),
                float(np.max(self.mus[keep] + z * self.sigmas[keep])))

    def breakpoints(self):
        return self.mus


def residual_delta(g_val, f_val):
    """Pearson residual ``g/f - 1`` with the ratio clamped to [1e-10, 1e10]."""
    g = np.asarray(g_val, dtype=float)
    f = np.asarray(f_val, dtype=float)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(f))):
        raise InvalidInputError("residual_delta needs finite inputs")
    if np.any(f <= 0):
        raise InvalidInputError("model density must be positive")
    if np.any(g < 0):
        raise InvalidInputError("data density must be nonnegative")
    out = np.clip(g / f, RATIO_MIN, RATIO_MAX) - 1.0
    return float(out) if out.ndim == 0 else out


def residual_ratio_from_logs(log_g, log_f):
    """Clamped ``g/f`` computed from log densities (no underflow)."""
    d = np.clip(np.asarray(log_g) - np.asarray(log_f), np.log(RATIO_MIN), np.log(RATIO_MAX))
    return np.exp(d)


def _check_delta(delta):
    d = np.asarray(delta, dtype=float)
    if np.any(~np.isfinite(d)):
        raise InvalidInputError("delta must be finite")
    if np.any(d + 1.0 <= 0):
        raise DomainError("K-function needs delta + 1 > 0")
    return d


def k_function(delta, tuning: TuningPair):
    """``((delta + 1)^A - 1) / A``, or ``log(delta + 1)`` when A is zero."""
    d = _check_delta(delta)
    A = tuning.A
    if abs(A) <= LIMIT_TOL:
        out = np.log1p(d)
    else:
        out = np.expm1(A * np.log1p(d)) / A
    return float(out) if out.ndim == 0 else out


def k_prime(delta, tuning: TuningPair):
    """Derivative of :func:`k_function`, ``(delta + 1)^(A - 1)``."""
    d = _check_delta(delta)
    A = tuning.A
    if abs(A) <= LIMIT_TOL:
        out = 1.0 / (1.0 + d)
    else:
        out = np.exp((A - 1.0) * np.log1p(d))
    return float(out) if out.ndim == 0 else out


def _expm1_over(c, ell):
    """``expm1(c * ell) / c`` with the ``c -> 0`` limit ``ell``."""
    if abs(c) <= LIMIT_TOL:
        return ell
    return np.expm1(np.minimum(c * ell, _EXP_CAP)) / c


def divergence_integrand(log_g, log_f, tuning: TuningPair):
    """Pointwise integrand of S(g, f), evaluated from log densities.

    The three integrals ``f^(1+a)/A - (1+a)/(AB) f^B g^A + g^(1+a)/B`` are
    combined under one integral sign and rewritten with ``expm1`` so that the
    integrand stays nonnegative and free of ``1/(AB)`` cancellation.  With
    ``l = log(g/f)``:

    * ``l <= 0``: ``f^(1+a) [exp(A l) E_B(l) - E_A(l)]``
    * ``l > 0``:  ``g^(1+a) [exp(-B l) E_A(-l) - E_B(-l)]``

    where ``E_c(l) = expm1(c l)/c`` (``= l`` for ``c = 0``).  The A = 0 and
    B = 0 limit forms fall out of ``E_0(l) = l``.
    """
    lg = np.asarray(log_g, dtype=float)
    lf = np.asarray(log_f, dtype=float)
    A, B = tuning.A, tuning.B
    a1 = 1.0 + tuning.alpha
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        ell = lg - lf
        ell = np.where(np.isnan(ell), 0.0, ell)
        neg = ell <= 0
        ln = np.where(neg, ell, 0.0)
        lp = np.where(neg, 0.0, -ell)
        left = np.exp(np.minimum(a1 * lf, _EXP_CAP)) * (
            np.exp(np.minimum(A * ln, _EXP_CAP)) * _expm1_over(B, ln) - _expm1_over(A, ln))
        right = np.exp(np.minimum(a1 * lg, _EXP_CAP)) * (
            np.exp(np.minimum(B * lp, _EXP_CAP)) * _expm1_over(A, lp) - _expm1_over(B, lp))
        out = np.where(neg, left, right)
        both_zero = np.isneginf(lg) & np.isneginf(lf)
        out = np.where(both_zero | np.isnan(out), 0.0, out)
    return out


def s_divergence(g: DensityEvaluator, f: DensityEvaluator, tuning: TuningPair,
                 quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """S-divergence between two densities by adaptive quadrature.

    The integration range is the hull of both truncation intervals and all
    three terms (including the one that involves ``g`` only) are included, so
    ``S(g, g) = 0`` up to quadrature error.
    Quadrature failures propagate as :class:`~sdive.exceptions.QuadratureError`.
    """
    lo, hi = _hull(g.bounds(quad.truncation_mass), f.bounds(quad.truncation_mass))
    scale = min(g.feature_scale, f.feature_scale)
    panels = int(min(max(16, np.ceil((hi - lo) / scale)), quad.max_subdivisions // 4))
    pts = [p for p in (g.breakpoints(), f.breakpoints()) if p is not None]
    points = np.concatenate([np.atleast_1d(p) for p in pts]) if pts else None

    def integrand(x):
        return divergence_integrand(g.logpdf(x), f.logpdf(x), tuning)

    return float(integrate(integrand, lo, hi, quad=quad, panels=panels, points=points))


def _hull(*intervals):
    return min(i[0] for i in intervals), max(i[1] for i in intervals)
