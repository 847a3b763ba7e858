"""Kernel smoothing of data, models and population densities; bandwidths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .divergence import DensityEvaluator, NormalDensity, NormalMixtureDensity
from .exceptions import DegenerateSampleError, DomainError, InvalidInputError
from .models import ModelDensity, ParametricModel, robust_location_scale
from .quadrature import DEFAULT_QUAD, QuadratureSpec, integrate_batch

KERNEL_FAMILIES = ("gaussian",)
# half-width of the kernel window, in bandwidths
KERNEL_REACH = 8.0


@dataclass(frozen=True)
class KernelSpec:
    """Kernel ``W(x, y, h) = w((x - y)/h) / h``."""

    family: str = "gaussian"
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise InvalidInputError(f"unsupported kernel family {self.family!r}")
        h = float(self.bandwidth)
        if not (np.isfinite(h) and h > 0):
            raise InvalidInputError(f"bandwidth must be positive, got {self.bandwidth!r}")
        object.__setattr__(self, "bandwidth", h)

    @property
    def h(self) -> float:
        return self.bandwidth

    @property
    def sup(self) -> float:
        """``sup_{x,y} W(x, y, h)``."""
        return 1.0 / (self.bandwidth * np.sqrt(2.0 * np.pi))

    def weight(self, x, y):
        return norm.pdf(x, y, self.bandwidth)

    def log_weight(self, x, y):
        return norm.logpdf(x, y, self.bandwidth)

    def scaled(self, c: float) -> "KernelSpec":
        return KernelSpec(self.family, self.bandwidth * c)


class SmoothedData(DensityEvaluator):
    """Kernel density estimate ``g*_n(x) = mean_i W(x, X_i, h)``.

    Evaluation is exact summation over all observations.
    """

    def __init__(self, sample, kernel: KernelSpec):
        x = np.asarray(sample, dtype=float).ravel()
        if x.size == 0:
            raise InvalidInputError("cannot smooth an empty sample")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("sample contains non-finite values")
        self.sample = x
        self.kernel = kernel
        self.feature_scale = kernel.bandwidth

    @property
    def n(self) -> int:
        return self.sample.size

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return self.kernel.weight(x[..., None], self.sample).mean(axis=-1)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        lw = self.kernel.log_weight(x[..., None], self.sample)
        return logsumexp(lw, axis=-1) - np.log(self.n)

    def bounds(self, mass):
        z = norm.isf(mass)
        h = self.kernel.bandwidth
        return float(self.sample.min() - z * h), float(self.sample.max() + z * h)

    def breakpoints(self):
        return self.sample

    def __repr__(self):
        return f"SmoothedData(n={self.n}, h={self.kernel.bandwidth!r})"


class SmoothedDensity(DensityEvaluator):
    """Convolution ``int W(x, y, h) base(y) dy`` of a density with a kernel.

    ``closed_form`` names the analytic convolution when one is used; the
    numeric path integrates over ``y`` in ``x +- 8h`` clipped to the base
    density's truncation interval.
    """

    def __init__(self, base: DensityEvaluator, kernel: KernelSpec, *,
                 quad: QuadratureSpec = DEFAULT_QUAD, closed: bool = True):
        self.base = base
        self.kernel = kernel
        self.quad = quad
        self.feature_scale = float(np.hypot(base.feature_scale, kernel.bandwidth))
        self._closed = _closed_convolution(base, kernel) if closed else None
        self.closed_form = None if self._closed is None else type(self._closed).__name__

    def logpdf(self, x):
        if self._closed is not None:
            return self._closed.logpdf(x)
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x))

    def pdf(self, x):
        if self._closed is not None:
            return self._closed.pdf(x)
        return self.numeric_pdf(x)

    def numeric_pdf(self, x):
        """The convolution by adaptive quadrature, ignoring any closed form."""
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x).ravel()
        h = self.kernel.bandwidth
        blo, bhi = self.base.bounds(self.quad.truncation_mass)
        lo = np.maximum(flat - KERNEL_REACH * h, blo)
        hi = np.minimum(flat + KERNEL_REACH * h, bhi)
        hi = np.maximum(hi, lo)
        width = KERNEL_REACH * 2 * h
        panels = int(np.clip(np.ceil(width / min(h, self.base.feature_scale)) * 2, 16, 4096))

        def integrand(y, k):
            return self.kernel.weight(flat[k], y) * self.base.pdf(y)

        out = integrate_batch(integrand, lo, hi, quad=self.quad, panels=panels)
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def bounds(self, mass):
        lo, hi = self.base.bounds(mass)
        z = norm.isf(mass)
        h = self.kernel.bandwidth
        return lo - z * h, hi + z * h

    def breakpoints(self):
        return self.base.breakpoints()

    def __repr__(self):
        return f"SmoothedDensity({self.base!r}, h={self.kernel.bandwidth!r})"


def _closed_convolution(base, kernel):
    if kernel.family != "gaussian":
        return None
    h = kernel.bandwidth
    if isinstance(base, ModelDensity):
        closed = base.model.smoothed_logpdf_closed(base.theta, 0.0, kernel)
        if closed is None:
            return None
        return _ClosedModelSmooth(base, kernel)
    if isinstance(base, NormalDensity):
        return NormalDensity(base.mu, float(np.hypot(base.sigma, h)))
    if isinstance(base, NormalMixtureDensity):
        return NormalMixtureDensity(base.weights, base.mus, np.hypot(base.sigmas, h))
    return None


class _ClosedModelSmooth(DensityEvaluator):
    def __init__(self, base: ModelDensity, kernel):
        self.base = base
        self.kernel = kernel

    def logpdf(self, x):
        return self.base.model.smoothed_logpdf_closed(self.base.theta, x, self.kernel)

    def pdf(self, x):
        return np.exp(self.logpdf(x))


def smooth_data(sample, kernel: KernelSpec) -> SmoothedData:
    return SmoothedData(sample, kernel)


def smooth_model(model: ParametricModel, theta, kernel: KernelSpec, *,
                 quad: QuadratureSpec = DEFAULT_QUAD, closed: bool = True) -> SmoothedDensity:
    """``f*_theta``; analytic for the normal model with a gaussian kernel."""
    return SmoothedDensity(ModelDensity(model, theta), kernel, quad=quad, closed=closed)


def smooth_density(g: DensityEvaluator, kernel: KernelSpec, *,
                   quad: QuadratureSpec = DEFAULT_QUAD) -> SmoothedDensity:
    """Population smoothing ``g*``."""
    return SmoothedDensity(g, kernel, quad=quad)


# --------------------------------------------------------------------------
# smoothed scores

def smoothed_logpdf(model: ParametricModel, theta, kernel: KernelSpec | None, x,
                    quad: QuadratureSpec = DEFAULT_QUAD):
    """``log f*_theta(x)``; ``kernel=None`` means no smoothing."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if kernel is None:
        return model.logpdf(theta, x)
    closed = model.smoothed_logpdf_closed(theta, x, kernel)
    if closed is not None:
        return closed
    return smooth_model(model, theta, kernel, quad=quad).logpdf(x)


def _fd_score(model, theta, kernel, x, quad, rel):
    theta = model.check_theta(theta)
    step = np.maximum(rel, rel * np.abs(theta))
    out = np.empty((model.dim, x.size))
    for j in range(model.dim):
        e = np.zeros(model.dim)
        e[j] = step[j]
        out[j] = (smoothed_logpdf(model, theta + e, kernel, x, quad)
                  - smoothed_logpdf(model, theta - e, kernel, x, quad)) / (2 * step[j])
    return out


def smoothed_score_raw(model: ParametricModel, theta, kernel: KernelSpec | None, x, *,
                       quad: QuadratureSpec = DEFAULT_QUAD, closed: bool = True):
    """:func:`smoothed_score` without the underflow check (for integrands)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if kernel is None:
        return model.score(theta, x)
    if closed:
        out = model.smoothed_score_closed(theta, x, kernel)
        if out is not None:
            return out
    return _fd_score(model, theta, kernel, x, quad, 1e-6)


def smoothed_hessian_raw(model: ParametricModel, theta, kernel: KernelSpec | None, x, *,
                         quad: QuadratureSpec = DEFAULT_QUAD, closed: bool = True):
    """:func:`smoothed_score_hessian` without the underflow check."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if kernel is None:
        return model.score_hessian(theta, x)
    if closed:
        out = model.smoothed_hessian_closed(theta, x, kernel)
        if out is not None:
            return out
    theta = model.check_theta(theta)
    step = np.maximum(1e-4, 1e-4 * np.abs(theta))
    out = np.empty((model.dim, model.dim, x.size))
    for j in range(model.dim):
        e = np.zeros(model.dim)
        e[j] = step[j]
        out[:, j] = (smoothed_score_raw(model, theta + e, kernel, x, quad=quad, closed=closed)
                     - smoothed_score_raw(model, theta - e, kernel, x, quad=quad, closed=closed)) / (2 * step[j])
    return 0.5 * (out + out.transpose(1, 0, 2))


def _check_positive(model, theta, kernel, x, quad):
    lf = smoothed_logpdf(model, theta, kernel, x, quad)
    if np.any(~(np.exp(lf) > 0.0)):
        raise DomainError("smoothed model density underflows to zero")


def smoothed_score(model: ParametricModel, theta, kernel: KernelSpec | None, x, *,
                   quad: QuadratureSpec = DEFAULT_QUAD, closed: bool = True):
    """Smoothed score ``u~_theta(x) = grad log f*_theta(x)``, shape ``(p, N)``.

    Uses the model's closed form when it has one (and ``closed`` is set),
    otherwise central differences of ``log f*`` with relative step 1e-6.
    ``kernel=None`` gives the ordinary score.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _check_positive(model, theta, kernel, x, quad)
    return smoothed_score_raw(model, theta, kernel, x, quad=quad, closed=closed)


def smoothed_score_hessian(model: ParametricModel, theta, kernel: KernelSpec | None, x, *,
                           quad: QuadratureSpec = DEFAULT_QUAD, closed: bool = True):
    """``grad u~_theta(x)``, shape ``(p, p, N)``; the smoothed information is its negation.

    Finite differences (relative step 1e-4) of :func:`smoothed_score` are used
    when no closed form exists.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _check_positive(model, theta, kernel, x, quad)
    return smoothed_hessian_raw(model, theta, kernel, x, quad=quad, closed=closed)


# --------------------------------------------------------------------------
# bandwidths

def normal_reference_bandwidth(sample) -> float:
    """``1.06 * sigma0 * n^(-1/5)`` with ``sigma0`` the normalised MAD about the median."""
    x = np.asarray(sample, dtype=float).ravel()
    if x.size < 2:
        raise DegenerateSampleError("bandwidth rule needs at least two observations")
    _, sigma0 = robust_location_scale(x)
    if sigma0 <= 0:
        raise DegenerateSampleError("median absolute deviation is zero")
    return 1.06 * sigma0 * x.size ** (-0.2)


@dataclass(frozen=True)
class BandwidthRule:
    """How to pick ``h`` for a sample.

    ``kind`` is ``normal_reference`` (1.06 sigma0 n^-1/5), ``fixed`` (``h =
    value``) or ``relative`` (``h = value * sigma0``).
    """

    kind: str = "normal_reference"
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ("normal_reference", "fixed", "relative"):
            raise InvalidInputError(f"unknown bandwidth rule {self.kind!r}")
        if self.kind != "normal_reference":
            if self.value is None or not (np.isfinite(self.value) and self.value > 0):
                raise InvalidInputError(f"{self.kind} bandwidth needs a positive value")

    @classmethod
    def parse(cls, text) -> "BandwidthRule":
        """``auto``, ``<h>`` or ``rel:<h0>``."""
        if isinstance(text, BandwidthRule):
            return text
        t = str(text).strip().lower()
        try:
            if t in ("auto", "normal_reference"):
                return cls("normal_reference")
            if t.startswith("rel:"):
                return cls("relative", float(t[4:]))
            if t.startswith("fixed:"):
                return cls("fixed", float(t[6:]))
            return cls("fixed", float(t))
        except ValueError:
            raise InvalidInputError(f"cannot parse bandwidth {text!r}") from None

    def resolve(self, sample) -> float:
        if self.kind == "fixed":
            return float(self.value)
        if self.kind == "relative":
            _, sigma0 = robust_location_scale(sample)
            if sigma0 <= 0:
                raise DegenerateSampleError("median absolute deviation is zero")
            return float(self.value) * sigma0
        return normal_reference_bandwidth(sample)

    def __str__(self):
        if self.kind == "normal_reference":
            return "auto"
        return f"rel:{self.value!r}" if self.kind == "relative" else repr(self.value)
