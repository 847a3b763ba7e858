import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from sdive.exceptions import DegenerateSampleError, DomainError, InvalidInputError
from sdive.models import ModelDensity, NormalModel
from sdive.quadrature import integrate
from sdive.smoothing import (
    BandwidthRule,
    KernelSpec,
    SmoothedDensity,
    normal_reference_bandwidth,
    smooth_data,
    smooth_model,
    smoothed_score,
    smoothed_score_hessian,
)

M = NormalModel()


def test_kernel_rejects_nonpositive_bandwidth():
    with pytest.raises(InvalidInputError):
        KernelSpec("gaussian", 0.0)
    with pytest.raises(InvalidInputError):
        KernelSpec("epanechnikov", 1.0)


def test_kernel_sup_bound():
    k = KernelSpec("gaussian", 0.3)
    x = np.linspace(-2, 2, 401)
    assert k.weight(x, 0.0).max() <= k.sup * (1 + 1e-12)


@pytest.mark.parametrize("sample,x,expected", [([0.0], 0.0, 0.39894228), ([-1.0, 1.0], 0.0, 0.24197072)])
def test_smooth_data_examples(sample, x, expected):
    assert smooth_data(sample, KernelSpec("gaussian", 1.0)).pdf(x) == pytest.approx(expected, abs=1e-8)


def test_smooth_data_mass():
    x = np.random.default_rng(0).normal(size=1000)
    g = smooth_data(x, KernelSpec("gaussian", 0.3))
    lo, hi = g.bounds(1e-12)
    assert integrate(g.pdf, lo, hi, panels=200) == pytest.approx(1.0, abs=1e-6)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.floats(-12, 12), st.floats(0.05, 3))
def test_smooth_data_is_mean_of_kernel_weights(sample, x, h):
    direct = np.mean(norm.pdf(x, np.array(sample), h))
    assert smooth_data(sample, KernelSpec("gaussian", h)).pdf(x) == pytest.approx(direct, rel=1e-12, abs=1e-300)


def test_smooth_data_rejects_empty():
    with pytest.raises(InvalidInputError):
        smooth_data([], KernelSpec())


def test_smooth_model_closed_form_example():
    f = smooth_model(M, [0.0, 1.0], KernelSpec("gaussian", 0.5))
    assert f.pdf(0.0) == pytest.approx(1 / np.sqrt(2 * np.pi * 1.25), abs=1e-12)
    assert f.pdf(0.0) == pytest.approx(0.35682, abs=1e-5)


def test_smooth_model_small_bandwidth_limit():
    f = smooth_model(M, [0.0, 1.0], KernelSpec("gaussian", 1e-4))
    x = np.array([-2.0, 0.0, 2.0])
    np.testing.assert_allclose(f.pdf(x), norm.pdf(x), atol=1e-6)


@pytest.mark.parametrize("theta", [(0.0, 1.0), (2.0, 0.5), (-1.0, 3.0)])
@pytest.mark.parametrize("h", [0.1, 0.5, 1.0])
def test_numeric_convolution_matches_closed_form(theta, h):
    x = np.linspace(-3, 3, 7)
    numeric = SmoothedDensity(ModelDensity(M, theta), KernelSpec("gaussian", h), closed=False).pdf(x)
    np.testing.assert_allclose(numeric, norm.pdf(x, theta[0], np.hypot(theta[1], h)), atol=1e-8)


def test_smoothed_model_x_derivative():
    f = smooth_model(M, [0.3, 1.2], KernelSpec("gaussian", 0.6))
    x, s2 = np.linspace(-3, 3, 9), 1.2**2 + 0.36
    fd = (f.pdf(x + 1e-6) - f.pdf(x - 1e-6)) / 2e-6
    np.testing.assert_allclose(fd, -(x - 0.3) / s2 * f.pdf(x), atol=1e-5)


@pytest.mark.parametrize("h,expected", [(None, 1.0), (1.0, 0.5)])
def test_smoothed_score_examples(h, expected):
    k = None if h is None else KernelSpec("gaussian", h)
    assert smoothed_score(M, [0.0, 1.0], k, 1.0)[0, 0] == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("h,expected", [(None, -1.0), (1.0, -0.5)])
def test_smoothed_hessian_examples(h, expected):
    k = None if h is None else KernelSpec("gaussian", h)
    H = smoothed_score_hessian(M, [0.0, 1.0], k, np.array([0.7]))
    assert H[0, 0, 0] == pytest.approx(expected, rel=1e-12)


def test_finite_difference_path_agrees_with_closed_form():
    from sdive.smoothing import _fd_score

    x = np.linspace(-2, 2, 5)
    k = KernelSpec("gaussian", 0.7)
    closed = smoothed_score(M, [0.2, 1.1], k, x)
    fd = _fd_score(M, np.array([0.2, 1.1]), k, x, None, 1e-6)
    np.testing.assert_allclose(fd, closed, atol=1e-5)


def test_smoothed_hessian_symmetric():
    H = smoothed_score_hessian(M, [0.2, 1.1], KernelSpec("gaussian", 0.4), np.linspace(-3, 3, 7))
    np.testing.assert_allclose(H, np.swapaxes(H, 0, 1), atol=1e-14)


def test_smoothed_score_underflow_is_domain_error():
    with pytest.raises(DomainError):
        smoothed_score(M, [0.0, 1.0], KernelSpec("gaussian", 0.1), 1e4)


def test_normal_reference_bandwidth_three_points():
    h = normal_reference_bandwidth([-1.0, 0.0, 1.0])
    assert h == pytest.approx(1.06 / 0.6745 * 3 ** -0.2, rel=1e-14)
    assert h == pytest.approx(1.2615, abs=1e-4)


def test_normal_reference_bandwidth_unit_mad():
    # 25 points each side of 0 at distances straddling 0.6745, so the MAD is 0.6745
    d = np.concatenate([np.linspace(0.1, 0.6745, 13), np.linspace(0.6745, 2.0, 13)[1:]])
    x = np.concatenate([-d, d])
    assert normal_reference_bandwidth(x) == pytest.approx(1.06 * 50 ** -0.2, rel=1e-12)


def test_normal_reference_bandwidth_degenerate():
    with pytest.raises(DegenerateSampleError):
        normal_reference_bandwidth([2.0, 2.0, 2.0])


@given(st.lists(st.floats(-100, 100), min_size=3, max_size=40, unique=True), st.randoms())
def test_bandwidth_permutation_invariant(x, rnd):
    x = np.array(x)
    if np.median(np.abs(x - np.median(x))) == 0:
        return
    y = x.copy()
    rnd.shuffle(y)
    assert normal_reference_bandwidth(y) == normal_reference_bandwidth(x)


@pytest.mark.parametrize("text,kind,value", [("auto", "normal_reference", None), ("0.3", "fixed", 0.3),
                                             ("rel:0.7", "relative", 0.7), ("fixed:2", "fixed", 2.0)])
def test_bandwidth_rule_parse(text, kind, value):
    r = BandwidthRule.parse(text)
    assert (r.kind, r.value) == (kind, value)
    assert BandwidthRule.parse(str(r)) == r


def test_bandwidth_rule_relative():
    x = np.array([-1.0, 0.0, 1.0])
    assert BandwidthRule.parse("rel:0.5").resolve(x) == pytest.approx(0.5 / 0.6745)
