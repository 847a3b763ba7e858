"""Parametric model families, distribution specs and contaminated sampling."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .divergence import DensityEvaluator
from .exceptions import InvalidInputError, InvalidParameterError

_LOG_2PI = np.log(2.0 * np.pi)


def normal_density(mu, sigma, x):
    """N(mu, sigma^2) density at ``x``."""
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma!r}")
    z = (np.asarray(x, dtype=float) - mu) / sigma
    out = np.exp(-0.5 * z * z) / (sigma * np.sqrt(2.0 * np.pi))
    return float(out) if out.ndim == 0 else out


def normal_score(mu, sigma, x):
    """Gradient of the normal log density in ``(mu, sigma)``."""
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma!r}")
    d = np.asarray(x, dtype=float) - mu
    return np.array([d / sigma**2, d * d / sigma**3 - 1.0 / sigma])


def robust_location_scale(sample):
    """Median and normalised MAD (``median |x - median| / 0.6745``)."""
    x = np.asarray(sample, dtype=float)
    mu0 = float(np.median(x))
    return mu0, float(np.median(np.abs(x - mu0)) / 0.6745)


def _fd_step(theta, rel):
    return np.maximum(rel, rel * np.abs(theta))


class ParametricModel:
    """A continuous parametric family ``f_theta`` on the real line.

    Concrete models implement :meth:`logpdf`, :meth:`sample`, :meth:`bounds`
    and :meth:`check_theta`.  Scores default to central finite differences of
    the log density; models with closed forms override them.  The
    ``smoothed_*_closed`` hooks return ``None`` when no analytic convolution
    with the given kernel is known, in which case the smoothing module falls
    back to numeric convolution.

    Identifiability and a theta-free support are assumed, not checked.
    """

    dim = 1
    param_names: tuple[str, ...] = ("theta",)

    def check_theta(self, theta):
        return np.asarray(theta, dtype=float).reshape(self.dim)

    def logpdf(self, theta, x):
        raise NotImplementedError

    def pdf(self, theta, x):
        return np.exp(self.logpdf(theta, x))

    def score(self, theta, x):
        """``u_theta(x)``, shape ``(p, N)``."""
        theta = self.check_theta(theta)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        step = _fd_step(theta, 1e-6)
        out = np.empty((self.dim, x.size))
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = step[j]
            out[j] = (self.logpdf(theta + e, x) - self.logpdf(theta - e, x)) / (2 * step[j])
        return out

    def score_hessian(self, theta, x):
        """``grad u_theta(x)``, shape ``(p, p, N)``; ``i_theta`` is its negation."""
        theta = self.check_theta(theta)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        step = _fd_step(theta, 1e-4)
        out = np.empty((self.dim, self.dim, x.size))
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = step[j]
            out[:, j] = (self.score(theta + e, x) - self.score(theta - e, x)) / (2 * step[j])
        return 0.5 * (out + out.transpose(1, 0, 2))

    def sample(self, theta, n, rng=None):
        raise NotImplementedError

    def bounds(self, theta, mass):
        raise NotImplementedError

    def feature_scale(self, theta):
        lo, hi = self.bounds(theta, 0.25)
        return hi - lo

    def to_free(self, theta):
        return self.check_theta(theta).copy()

    def from_free(self, z):
        return np.asarray(z, dtype=float).copy()

    def degenerate_free(self, z) -> bool:
        """True when free coordinates ``z`` describe a collapsed model."""
        return False

    def initial_theta(self, sample, kind="robust"):
        raise NotImplementedError

    def mle(self, sample):
        return None

    def power_integrals(self, theta, alpha):
        """``(int f^(1+a), int f^(1+a) u)`` in closed form, or ``None``."""
        return None

    def smoothed_logpdf_closed(self, theta, x, kernel):
        return None

    def smoothed_score_closed(self, theta, x, kernel):
        return None

    def smoothed_hessian_closed(self, theta, x, kernel):
        return None

    def smoothed_power_integrals(self, theta, alpha, kernel):
        """Closed-form ``(int f*^(1+a), int f*^(1+a) u~)`` or ``None``."""
        return None


class NormalModel(ParametricModel):
    """Normal location-scale family, ``theta = (mu, sigma)``."""

    dim = 2
    param_names = ("mu", "sigma")

    def check_theta(self, theta):
        t = np.asarray(theta, dtype=float).reshape(2)
        if not (np.isfinite(t[0]) and t[1] > 0 and np.isfinite(t[1])):
            raise InvalidParameterError(f"normal model needs finite mu and sigma > 0, got {t}")
        return t

    def logpdf(self, theta, x):
        mu, sigma = self.check_theta(theta)
        return norm.logpdf(x, mu, sigma)

    def score(self, theta, x):
        mu, sigma = self.check_theta(theta)
        return normal_score(mu, sigma, np.atleast_1d(x))

    def score_hessian(self, theta, x):
        mu, sigma = self.check_theta(theta)
        return _normal_hessian(np.atleast_1d(np.asarray(x, dtype=float)) - mu, sigma, 0.0)

    def sample(self, theta, n, rng=None):
        mu, sigma = self.check_theta(theta)
        return np.random.default_rng(rng).normal(mu, sigma, size=n)

    def bounds(self, theta, mass):
        mu, sigma = self.check_theta(theta)
        z = norm.isf(mass)
        return mu - z * sigma, mu + z * sigma

    def feature_scale(self, theta):
        return float(self.check_theta(theta)[1])

    def to_free(self, theta):
        mu, sigma = self.check_theta(theta)
        return np.array([mu, np.log(sigma)])

    def from_free(self, z):
        return np.array([z[0], np.exp(z[1])])

    def degenerate_free(self, z):
        return bool(z[1] < -30.0)

    def initial_theta(self, sample, kind="robust"):
        if kind == "mle":
            return self.mle(sample)
        return np.array(robust_location_scale(sample))

    def mle(self, sample):
        x = np.asarray(sample, dtype=float)
        return np.array([x.mean(), x.std()])

    def power_integrals(self, theta, alpha):
        mu, sigma = self.check_theta(theta)
        I = (2 * np.pi) ** (-alpha / 2) * sigma ** (-alpha) / np.sqrt(1 + alpha)
        return I, np.array([0.0, -alpha * I / (sigma * (1 + alpha))])

    def _s(self, theta, kernel):
        if kernel.family != "gaussian":
            return None
        mu, sigma = self.check_theta(theta)
        return mu, sigma, np.sqrt(sigma**2 + kernel.bandwidth**2)

    def smoothed_logpdf_closed(self, theta, x, kernel):
        p = self._s(theta, kernel)
        return None if p is None else norm.logpdf(x, p[0], p[2])

    def smoothed_score_closed(self, theta, x, kernel):
        p = self._s(theta, kernel)
        if p is None:
            return None
        mu, sigma, s = p
        d = np.atleast_1d(np.asarray(x, dtype=float)) - mu
        s2 = s * s
        return np.array([d / s2, sigma * (d * d / s2**2 - 1.0 / s2)])

    def smoothed_hessian_closed(self, theta, x, kernel):
        p = self._s(theta, kernel)
        if p is None:
            return None
        mu, sigma, s = p
        return _normal_hessian(np.atleast_1d(np.asarray(x, dtype=float)) - mu, sigma,
                               kernel.bandwidth)

    def smoothed_power_integrals(self, theta, alpha, kernel):
        p = self._s(theta, kernel)
        if p is None:
            return None
        mu, sigma, s = p
        I = (2 * np.pi) ** (-alpha / 2) * s ** (-alpha) / np.sqrt(1 + alpha)
        # d/dsigma of I is -alpha I sigma / s^2
        return I, np.array([0.0, -alpha * I * sigma / (s * s * (1 + alpha))])


def _normal_hessian(d, sigma, h):
    s2 = sigma**2 + h**2
    z2 = d * d
    out = np.empty((2, 2, d.size))
    out[0, 0] = -1.0 / s2
    out[0, 1] = out[1, 0] = -2.0 * sigma * d / s2**2
    out[1, 1] = z2 / s2**2 - 1.0 / s2 - 4.0 * sigma**2 * z2 / s2**3 + 2.0 * sigma**2 / s2**2
    return out


class NormalMeanModel(ParametricModel):
    """Normal family with known ``sigma``; scalar ``theta = (mu,)``."""

    dim = 1
    param_names = ("mu",)

    def __init__(self, sigma=1.0):
        if not sigma > 0:
            raise InvalidParameterError("sigma must be positive")
        self.sigma = float(sigma)

    def check_theta(self, theta):
        t = np.asarray(theta, dtype=float).reshape(1)
        if not np.isfinite(t[0]):
            raise InvalidParameterError("mu must be finite")
        return t

    def logpdf(self, theta, x):
        return norm.logpdf(x, self.check_theta(theta)[0], self.sigma)

    def score(self, theta, x):
        mu = self.check_theta(theta)[0]
        return ((np.atleast_1d(np.asarray(x, dtype=float)) - mu) / self.sigma**2)[None, :]

    def score_hessian(self, theta, x):
        x = np.atleast_1d(x)
        return np.full((1, 1, x.size), -1.0 / self.sigma**2)

    def sample(self, theta, n, rng=None):
        return np.random.default_rng(rng).normal(self.check_theta(theta)[0], self.sigma, size=n)

    def bounds(self, theta, mass):
        mu = self.check_theta(theta)[0]
        z = norm.isf(mass)
        return mu - z * self.sigma, mu + z * self.sigma

    def feature_scale(self, theta):
        return self.sigma

    def initial_theta(self, sample, kind="robust"):
        if kind == "mle":
            return self.mle(sample)
        return np.array([np.median(sample)])

    def mle(self, sample):
        return np.array([np.mean(sample)])

    def power_integrals(self, theta, alpha):
        I = (2 * np.pi) ** (-alpha / 2) * self.sigma ** (-alpha) / np.sqrt(1 + alpha)
        return I, np.zeros(1)

    def smoothed_logpdf_closed(self, theta, x, kernel):
        if kernel.family != "gaussian":
            return None
        s = np.sqrt(self.sigma**2 + kernel.bandwidth**2)
        return norm.logpdf(x, self.check_theta(theta)[0], s)

    def smoothed_score_closed(self, theta, x, kernel):
        if kernel.family != "gaussian":
            return None
        s2 = self.sigma**2 + kernel.bandwidth**2
        return ((np.atleast_1d(np.asarray(x, dtype=float)) - self.check_theta(theta)[0]) / s2)[None, :]

    def smoothed_hessian_closed(self, theta, x, kernel):
        if kernel.family != "gaussian":
            return None
        s2 = self.sigma**2 + kernel.bandwidth**2
        return np.full((1, 1, np.atleast_1d(x).size), -1.0 / s2)

    def smoothed_power_integrals(self, theta, alpha, kernel):
        if kernel.family != "gaussian":
            return None
        s = np.sqrt(self.sigma**2 + kernel.bandwidth**2)
        return (2 * np.pi) ** (-alpha / 2) * s ** (-alpha) / np.sqrt(1 + alpha), np.zeros(1)


# --------------------------------------------------------------------------
# distribution specs used by the contamination sampler

_SPEC_RE = re.compile(r"^\s*(normal|t|chisq)\s*\(([^)]*)\)\s*$")


@dataclass(frozen=True)
class DistributionSpec:
    """A sampling distribution: ``normal(mu,sigma)``, ``t(df)`` or ``chisq(df)``.

    The second argument of ``normal`` is the standard deviation.
    """

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        arity = {"normal": 2, "t": 1, "chisq": 1}
        if self.kind not in arity:
            raise InvalidInputError(f"unknown distribution {self.kind!r}")
        if len(self.params) != arity[self.kind]:
            raise InvalidInputError(f"{self.kind} takes {arity[self.kind]} parameter(s)")
        if self.kind == "normal" and not self.params[1] > 0:
            raise InvalidInputError("normal sd must be positive")
        if self.kind != "normal" and not self.params[0] > 0:
            raise InvalidInputError("degrees of freedom must be positive")

    def sample(self, n, rng):
        if self.kind == "normal":
            return rng.normal(self.params[0], self.params[1], size=n)
        if self.kind == "t":
            return rng.standard_t(self.params[0], size=n)
        return rng.chisquare(self.params[0], size=n)

    def __str__(self):
        return f"{self.kind}({','.join(_fmt(p) for p in self.params)})"


def _fmt(v):
    return repr(int(v)) if float(v).is_integer() else repr(float(v))


def parse_spec(text: str) -> DistributionSpec:
    if isinstance(text, DistributionSpec):
        return text
    m = _SPEC_RE.match(str(text))
    if not m:
        raise InvalidInputError(f"cannot parse distribution spec {text!r}")
    try:
        params = tuple(float(p) for p in m.group(2).split(",") if p.strip())
    except ValueError:
        raise InvalidInputError(f"non-numeric parameter in {text!r}") from None
    return DistributionSpec(m.group(1), params)


def sample_contaminated(target, contaminant, epsilon, n, seed=None):
    """Draw ``n`` observations from ``(1 - eps) target + eps contaminant``.

    Each observation independently comes from the contaminant with
    probability ``epsilon``.  With ``epsilon == 0`` (or no contaminant) the
    random stream is identical to sampling the target alone.
    """
    target = parse_spec(target)
    if not (0.0 <= epsilon < 1.0):
        raise InvalidInputError(f"epsilon must lie in [0, 1), got {epsilon!r}")
    if int(n) < 1:
        raise InvalidInputError("n must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if contaminant is None or epsilon == 0.0:
        return target.sample(int(n), rng)
    contaminant = parse_spec(contaminant)
    mask = rng.random(int(n)) < epsilon
    clean = target.sample(int(n), rng)
    dirty = contaminant.sample(int(n), rng)
    return np.where(mask, dirty, clean)


class ModelDensity(DensityEvaluator):
    """``f_theta`` of a parametric model as a stand-alone density."""

    def __init__(self, model: ParametricModel, theta):
        self.model = model
        self.theta = model.check_theta(theta)
        self.feature_scale = float(model.feature_scale(self.theta))

    def logpdf(self, x):
        return self.model.logpdf(self.theta, x)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def bounds(self, mass):
        return self.model.bounds(self.theta, mass)

    def __repr__(self):
        return f"ModelDensity({type(self.model).__name__}, theta={self.theta.tolist()})"
