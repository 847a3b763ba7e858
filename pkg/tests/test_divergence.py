import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from sdive.divergence import (
    NormalDensity,
    NormalMixtureDensity,
    TuningPair,
    divergence_integrand,
    k_function,
    k_prime,
    residual_delta,
    s_divergence,
)
from sdive.exceptions import DomainError, InvalidInputError
from sdive.quadrature import QuadratureSpec

alphas = st.floats(0.0, 1.0)
lams = st.floats(-1.0, 2.0)


@given(alphas, lams)
def test_tuning_pair_exponents(a, lam):
    t = TuningPair(a, lam)
    assert t.A == 1 + lam * (1 - a)
    assert t.B == a - lam * (1 - a)
    assert abs(t.A + t.B - (1 + a)) <= 4 * np.finfo(float).eps * max(1.0, abs(t.A), abs(t.B))


def test_tuning_pair_rejects_negative_alpha():
    with pytest.raises(InvalidInputError):
        TuningPair(-0.1, 0.0)


@pytest.mark.parametrize("g,f,expected", [(2, 2, 0.0), (0, 1, -1 + 1e-10), (3, 1, 2.0)])
def test_residual_delta_examples(g, f, expected):
    assert residual_delta(g, f) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("g,f", [(np.nan, 1.0), (1.0, np.inf), (1.0, 0.0)])
def test_residual_delta_rejects_bad_input(g, f):
    with pytest.raises(InvalidInputError):
        residual_delta(g, f)


def test_residual_delta_clamps_large_ratio():
    assert residual_delta(1.0, 1e-300) == 1e10 - 1


@pytest.mark.parametrize("delta,tuning,expected", [
    (0.0, TuningPair(0.3, 0.7), 0.0),
    (1.0, TuningPair(1.0, 5.0), 1.0),
    (math.e - 1, TuningPair(0.0, -1.0), 1.0),
])
def test_k_function_examples(delta, tuning, expected):
    assert k_function(delta, tuning) == pytest.approx(expected, rel=1e-14, abs=1e-15)


def test_k_function_domain_error():
    with pytest.raises(DomainError):
        k_function(-1.0, TuningPair(0.5, 0.0))


@pytest.mark.parametrize("delta,A,expected", [(0.0, 0.3, 1.0), (3.0, 2.0, 4.0), (1.0, 0.5, 2 ** -0.5)])
def test_k_prime_examples(delta, A, expected):
    # choose lambda so that 1 + lam (1 - alpha) = A with alpha = 0
    assert k_prime(delta, TuningPair(0.0, A - 1.0)) == pytest.approx(expected, rel=1e-14)


@given(st.floats(-0.9, 10.0), st.floats(-0.5, 2.0))
def test_k_prime_matches_finite_differences(delta, A):
    t = TuningPair(0.0, A - 1.0)
    step = 1e-6
    fd = (k_function(delta + step, t) - k_function(delta - step, t)) / (2 * step)
    assert k_prime(delta, t) == pytest.approx(fd, rel=1e-5)


@pytest.mark.parametrize("tuning", [TuningPair(0.0, 0.0), TuningPair(0.5, -0.5), TuningPair(0.0, -1.0),
                                    TuningPair(1.0, 2.0), TuningPair(0.3, 0.3 / 0.7)])
def test_divergence_of_identical_densities_is_zero(tuning):
    g = NormalDensity(0.0, 1.0)
    assert abs(s_divergence(g, g, tuning)) <= QuadratureSpec().abs_tol


@pytest.mark.parametrize("lam", [-1.0, 0.0, 0.5, 2.0])
def test_alpha_one_is_squared_l2_distance(lam):
    # int (phi(x) - phi(x - 1))^2 dx = (1 - exp(-1/4)) / sqrt(pi)
    expected = (1 - math.exp(-0.25)) / math.sqrt(math.pi)
    assert expected == pytest.approx(0.124798, abs=1e-6)
    assert s_divergence(NormalDensity(0, 1), NormalDensity(1, 1), TuningPair(1.0, lam)) == pytest.approx(
        expected, abs=1e-9)


def test_kullback_leibler_limit():
    # B = 0 at alpha = lambda = 0: S = int g log(g / f) for this orientation
    g, f = NormalDensity(0.0, 1.0), NormalDensity(0.5, 1.5)
    kl = math.log(1.5) + (1 + 0.25) / (2 * 1.5**2) - 0.5
    assert s_divergence(g, f, TuningPair(0.0, 0.0)) == pytest.approx(kl, abs=1e-9)


def test_hellinger_limit_matches_direct_integral():
    # Hellinger member: check against scipy quadrature of the three-term definition
    g, f = NormalDensity(0.0, 1.0), NormalDensity(0.7, 1.2)
    t = TuningPair(0.0, -0.5)
    A, B, a1 = t.A, t.B, 1.0

    def direct(x):
        gx, fx = g.pdf(x), f.pdf(x)
        return fx**a1 / A - a1 / (A * B) * fx**B * gx**A + gx**a1 / B

    ref, _ = integrate.quad(direct, -30, 30, epsabs=1e-13, limit=200)
    assert s_divergence(g, f, t) == pytest.approx(ref, abs=1e-9)


@given(st.floats(-2, 2), st.floats(0.5, 2.0), st.floats(-2, 2), st.floats(0.5, 2.0), alphas, lams)
def test_nonnegative(mg, sg, mf, sf, a, lam):
    v = s_divergence(NormalDensity(mg, sg), NormalDensity(mf, sf), TuningPair(a, lam))
    assert v >= -QuadratureSpec().abs_tol


@given(st.floats(-1.5, 1.5), st.floats(0.6, 1.6))
def test_lambda_free_at_alpha_one(m, s):
    g, f = NormalDensity(0, 1), NormalDensity(m, s)
    vals = [s_divergence(g, f, TuningPair(1.0, lam)) for lam in (-1.0, 0.0, 2.0)]
    assert max(vals) - min(vals) <= 1e-8


@given(st.floats(0.0, 0.9), st.sampled_from(["A", "B"]), st.sampled_from([1e-6, -1e-6]))
def test_limit_branch_continuity(a, which, d):
    g, f = NormalDensity(0.0, 1.0), NormalDensity(0.6, 1.3)
    lam0 = -1.0 / (1 - a) if which == "A" else a / (1 - a)
    base = s_divergence(g, f, TuningPair(a, lam0))
    near = s_divergence(g, f, TuningPair(a, lam0 + d / (1 - a)))
    assert abs(near - base) <= 1e-5


def test_integrand_is_nonnegative_and_zero_on_diagonal():
    lg = np.linspace(-40, 5, 200)
    for t in (TuningPair(0.5, -0.5), TuningPair(0.0, -1.0), TuningPair(0.2, 2.0)):
        for shift in (-3.0, 0.0, 2.0):
            v = divergence_integrand(lg, lg + shift, t)
            assert np.all(v >= -1e-300)
            if shift == 0.0:
                assert np.all(v == 0.0)


def test_mixture_density_normalised():
    m = NormalMixtureDensity([0.9, 0.1], [0, 5], [1, 1])
    total, _ = integrate.quad(m.pdf, -15, 20, points=[0, 5], limit=200)
    assert total == pytest.approx(1.0, abs=1e-10)


def test_mixture_rejects_bad_weights():
    with pytest.raises(InvalidInputError):
        NormalMixtureDensity([0.5, 0.6], [0, 1], [1, 1])
