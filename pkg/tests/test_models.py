import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdive.exceptions import InvalidInputError
from sdive.models import (
    DistributionSpec,
    NormalMeanModel,
    NormalModel,
    normal_density,
    normal_score,
    parse_spec,
    sample_contaminated,
)


@pytest.mark.parametrize("mu,sigma,x,expected", [(0, 1, 0, 0.39894), (0, 3, 0, 0.13298), (1, 1, 1, 0.39894)])
def test_normal_density_examples(mu, sigma, x, expected):
    assert normal_density(mu, sigma, x) == pytest.approx(expected, abs=1e-5)


@pytest.mark.parametrize("mu,sigma,x,expected", [(0, 1, 0, (0, -1)), (0, 1, 1, (1, 0)), (0, 2, 2, (0.5, 0))])
def test_normal_score_examples(mu, sigma, x, expected):
    np.testing.assert_allclose(np.ravel(normal_score(mu, sigma, x)), expected, atol=1e-15)


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_invalid_sigma(bad):
    with pytest.raises(InvalidInputError):
        normal_density(0, bad, 0)


@given(st.floats(-5, 5), st.floats(0.2, 5), st.floats(-10, 10))
def test_score_matches_finite_differences(mu, sigma, x):
    m = NormalModel()
    th = np.array([mu, sigma])
    u = m.score(th, np.array([x]))[:, 0]
    for j in range(2):
        e = np.zeros(2)
        e[j] = 1e-6 * max(1.0, abs(th[j]))
        fd = (m.logpdf(th + e, x) - m.logpdf(th - e, x)) / (2 * e[j])
        assert u[j] == pytest.approx(float(fd), rel=1e-5, abs=1e-5)


@given(st.floats(-5, 5), st.floats(0.3, 5), st.floats(-10, 10))
def test_score_hessian_matches_finite_differences(mu, sigma, x):
    m = NormalModel()
    th = np.array([mu, sigma])
    H = m.score_hessian(th, np.array([x]))[:, :, 0]
    for j in range(2):
        e = np.zeros(2)
        e[j] = 1e-6 * max(1.0, abs(th[j]))
        fd = (m.score(th + e, np.array([x])) - m.score(th - e, np.array([x])))[:, 0] / (2 * e[j])
        np.testing.assert_allclose(H[:, j], fd, rtol=1e-5, atol=1e-5 * max(1.0, np.abs(fd).max()))


def test_mle_is_mean_and_biased_sd():
    x = np.random.default_rng(2).normal(3, 2, 100)
    np.testing.assert_allclose(NormalModel().mle(x), [x.mean(), x.std()], rtol=1e-14)


def test_sampler_moments():
    x = NormalModel().sample([0.0, 3.0], 100_000, np.random.default_rng(5))
    assert abs(x.mean()) < 0.05 and abs(x.std() - 3) < 0.05


def test_normal_mean_model_is_scalar():
    m = NormalMeanModel(2.0)
    assert m.dim == 1
    assert m.score([1.0], np.array([3.0]))[0, 0] == pytest.approx(0.5)


@pytest.mark.parametrize("text,kind,params", [("normal(15,3)", "normal", (15.0, 3.0)), ("t(1)", "t", (1.0,)),
                                              ("chisq(10)", "chisq", (10.0,)), (" normal( 0 , 10 ) ", "normal",
                                                                                  (0.0, 10.0))])
def test_parse_spec(text, kind, params):
    s = parse_spec(text)
    assert s == DistributionSpec(kind, params)
    assert parse_spec(str(s)) == s


@pytest.mark.parametrize("bad", ["cauchy(1)", "normal(0)", "normal(0,-1)", "t(x)", ""])
def test_parse_spec_rejects(bad):
    with pytest.raises(InvalidInputError):
        parse_spec(bad)


def test_contamination_zero_epsilon_matches_target_stream():
    a = sample_contaminated("normal(0,3)", None, 0.0, 50, 7)
    b = sample_contaminated("normal(0,3)", "normal(15,3)", 0.0, 50, 7)
    np.testing.assert_array_equal(a, b)


def test_contamination_near_total():
    x = sample_contaminated("normal(0,1)", "normal(15,1)", 1 - 1e-12, 10_000, 3)
    assert abs(x.mean() - 15) < 0.05


def test_contamination_deterministic():
    a = sample_contaminated("normal(0,3)", "t(1)", 0.2, 40, 11)
    b = sample_contaminated("normal(0,3)", "t(1)", 0.2, 40, 11)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("eps", [-0.1, 1.0])
def test_contamination_rejects_epsilon(eps):
    with pytest.raises(InvalidInputError):
        sample_contaminated("normal(0,1)", "normal(1,1)", eps, 10, 0)
