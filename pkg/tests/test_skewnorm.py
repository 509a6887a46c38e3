from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import log_ndtr

from swingintent import skewnorm
from swingintent.skewnorm import SkewNormalParams

finite = st.floats(-50, 50, allow_nan=False)
scales = st.floats(0.05, 20)
shapes = st.floats(-30, 30, allow_nan=False)


def fd_grad(x, p, h=1e-6):
    f = lambda loc, sc, sh: skewnorm.logpdf(x, SkewNormalParams(loc, sc, sh))
    hl, hs, ha = h * max(1, abs(p.location)), h * p.scale, h * max(1, abs(p.shape))
    return (
        (f(p.location + hl, p.scale, p.shape) - f(p.location - hl, p.scale, p.shape)) / (2 * hl),
        (f(p.location, p.scale + hs, p.shape) - f(p.location, p.scale - hs, p.shape)) / (2 * hs),
        (f(p.location, p.scale, p.shape + ha) - f(p.location, p.scale, p.shape - ha)) / (2 * ha),
    )


def test_standard_normal_value():
    p = SkewNormalParams.from_mean(0.0, 1.0, 0.0)
    assert skewnorm.logpdf(0.0, p) == pytest.approx(-0.9189385, abs=1e-7)


@given(finite, finite, scales)
def test_zero_shape_is_gaussian(x, loc, scale):
    p = SkewNormalParams(loc, scale, 0.0)
    assert skewnorm.logpdf(x, p) == pytest.approx(stats.norm.logpdf(x, loc, scale), rel=1e-12, abs=1e-12)


def test_value_against_quadrature():
    # normalizing constant of 2 phi(z) Phi(5 z) by quadrature, then the density at 1
    unnorm = lambda z: stats.norm.pdf(z) * stats.norm.cdf(5 * z)
    total, _ = integrate.quad(unnorm, -np.inf, np.inf, epsabs=1e-13)
    expected = np.log(unnorm(1.0) / total)
    assert skewnorm.logpdf(1.0, SkewNormalParams(0.0, 1.0, 5.0)) == pytest.approx(expected, abs=1e-10)


def test_matches_scipy():
    rng = np.random.default_rng(0)
    x = rng.normal(size=200) * 3
    for a in (-7.0, -1.0, 0.5, 4.0):
        p = SkewNormalParams(0.3, 1.7, a)
        np.testing.assert_allclose(skewnorm.logpdf(x, p), stats.skewnorm.logpdf(x, a, 0.3, 1.7), rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("alpha", [-20, -5, -1, 0, 1, 5, 20])
def test_normalization(alpha):
    omega = 1.3
    p = SkewNormalParams.from_mean(2.0, omega, alpha)
    x = np.linspace(p.mean - 30 * omega, p.mean + 30 * omega, 400_001)
    total = np.trapezoid(np.exp(skewnorm.logpdf(x, p)), x)
    assert abs(total - 1.0) < 1e-8


def test_log_norm_cdf_tail():
    t = np.concatenate([np.linspace(-40, 8, 2001), [-10.0, -1e3, -1e6]])
    np.testing.assert_allclose(skewnorm.log_norm_cdf(t), log_ndtr(t), rtol=1e-12, atol=1e-15)


def test_logpdf_finite_for_extreme_shape():
    p = SkewNormalParams(0.0, 1.0, 1e4)
    v = skewnorm.logpdf(np.array([-50.0, -1.0, 0.0, 3.0]), p)
    assert np.all(np.isfinite(v))


def test_scale_must_be_positive():
    with pytest.raises(ValueError):
        SkewNormalParams(0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        skewnorm.logpdf(0.0, SimpleNamespace(location=0.0, scale=-1.0, shape=0.0))


def test_grad_zero_shape_d_alpha():
    x, p = 1.7, SkewNormalParams(0.4, 2.0, 0.0)
    d_alpha = skewnorm.grad_logpdf(x, p)[2]
    assert d_alpha == pytest.approx(np.sqrt(2 / np.pi) * (x - 0.4) / 2.0, rel=1e-12)
    assert d_alpha == pytest.approx(fd_grad(x, p)[2], rel=1e-6)


def test_grad_at_location():
    p = SkewNormalParams(0.5, 1.5, 3.0)
    d_loc = skewnorm.grad_logpdf(0.5, p)[0]
    # Mills ratio phi(0)/Phi(0) = sqrt(2/pi)
    assert d_loc == pytest.approx(-3.0 * np.sqrt(2 / np.pi) / 1.5, rel=1e-12)
    assert d_loc == pytest.approx(fd_grad(0.5, p)[0], rel=1e-6)


def test_grad_random_grid():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        p = SkewNormalParams(rng.normal(0, 3), rng.uniform(0.2, 5), rng.uniform(-10, 10))
        x = p.location + p.scale * rng.normal(0, 2)
        an, fd = skewnorm.grad_logpdf(x, p), fd_grad(x, p)
        for a, f in zip(an, fd):
            worst = max(worst, abs(a - f) / max(abs(f), 1e-3))
    assert worst < 1e-6


@given(finite, finite, scales, shapes)
def test_symmetry(x, loc, scale, shape):
    p, q = SkewNormalParams(loc, scale, shape), SkewNormalParams(loc, scale, -shape)
    assert skewnorm.logpdf(x, p) == pytest.approx(skewnorm.logpdf(2 * loc - x, q), rel=1e-9, abs=1e-9)


@given(finite, scales, shapes)
def test_mean_location_round_trip(mu, scale, shape):
    back = skewnorm.location_to_mean(skewnorm.mean_to_location(mu, scale, shape), scale, shape)
    assert abs(back - mu) < 1e-12 * max(1.0, abs(mu), scale) * 10


def test_mean_location_examples():
    assert skewnorm.mean_to_location(0.0, 1.0, 0.0) == 0.0
    assert skewnorm.location_to_mean(0.0, 1.0, 1e6) == pytest.approx(0.79788, abs=1e-5)


def test_sample_gaussian_mean():
    n = 1_000_000
    x = skewnorm.sample(SkewNormalParams(3.0, 2.0, 0.0), n, seed=5)
    assert abs(x.mean() - 3.0) < 4 * 2.0 / np.sqrt(n)


def test_sample_skewness():
    p = SkewNormalParams(0.0, 1.0, -3.0)
    x = skewnorm.sample(p, 1_000_000, seed=6)
    g = stats.skew(x)
    assert g < 0
    assert abs(g - p.skewness) < 0.02


def test_sample_moments_match_params():
    p = SkewNormalParams.from_mean(10.0, 3.0, 4.0)
    x = skewnorm.sample(p, 400_000, seed=2)
    assert x.mean() == pytest.approx(10.0, abs=0.03)
    assert x.var() == pytest.approx(p.variance, rel=0.01)


def test_sample_deterministic():
    p = SkewNormalParams(1.0, 2.0, -1.0)
    np.testing.assert_array_equal(skewnorm.sample(p, 100, seed=9), skewnorm.sample(p, 100, seed=9))
    assert skewnorm.sample(p, 0, seed=1).shape == (0,)
    with pytest.raises(ValueError):
        skewnorm.sample(p, -1)


@settings(max_examples=50)
@given(st.floats(-0.95, 0.95))
def test_shape_from_skewness_inverts(g):
    a = skewnorm.shape_from_skewness(g)
    if abs(a) < 8.0:
        assert skewnorm.skewness(a) == pytest.approx(g, abs=1e-9)
