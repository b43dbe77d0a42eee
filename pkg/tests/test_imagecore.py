import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import conv2d_bruteforce, conv2d_padded, nearest_upsample, oracle_taps
from scalematch.errors import DegenerateImageError, ParameterError
from scalematch.imagecore import (
    GrayImage,
    KernelSpec,
    convolve_separable,
    derivative,
    gaussian_derivative_taps,
    gaussian_kernel,
    gradients,
    kernel_radius,
    normalize_photometric,
    smooth,
    warp_similarity,
)
from scalematch.transforms import SimilarityTransform

sigmas = st.floats(min_value=0.3, max_value=6.0, allow_nan=False)


# --- GrayImage -------------------------------------------------------------

def test_grayimage_rejects_non_finite():
    with pytest.raises(ParameterError):
        GrayImage(np.array([[0.0, np.nan]]))
    with pytest.raises(ParameterError):
        GrayImage(np.array([[np.inf]]))


def test_grayimage_rejects_empty_and_wrong_rank():
    with pytest.raises(ParameterError):
        GrayImage(np.zeros((0, 3)))
    with pytest.raises(ParameterError):
        GrayImage(np.zeros((2, 2, 2)))


def test_grayimage_is_immutable_copy():
    src = np.zeros((3, 4))
    img = GrayImage(src)
    src[0, 0] = 1.0
    assert img.data[0, 0] == 0.0
    assert (img.width, img.height) == (4, 3)
    with pytest.raises(ValueError):
        img.data[0, 0] = 2.0


# --- kernels ---------------------------------------------------------------

@given(sigmas)
def test_smooth_taps_sum_to_one(sigma):
    taps = gaussian_kernel(KernelSpec(sigma, "smooth"))
    assert abs(taps.sum() - 1.0) < 1e-10
    assert len(taps) == 2 * kernel_radius(sigma) + 1


@given(sigmas)
def test_derivative_taps_sum_to_zero_and_odd(sigma):
    taps = gaussian_kernel(KernelSpec(sigma, "derivative-u"))
    assert abs(taps.sum()) < 1e-10
    np.testing.assert_allclose(taps, -taps[::-1], atol=1e-15)


@given(sigmas, st.integers(0, 3))
def test_taps_match_moment_oracle(sigma, order):
    np.testing.assert_allclose(gaussian_derivative_taps(sigma, order), oracle_taps(sigma, order), atol=1e-12)


def test_smooth_tap_ratio_center_to_neighbour():
    taps = gaussian_derivative_taps(1.0, 0)
    r = kernel_radius(1.0)
    assert taps[r] / taps[r + 1] == pytest.approx(math.exp(0.5), rel=1e-12)


def test_kernel_radius_is_three_sigma():
    assert kernel_radius(1.0) == 3
    assert kernel_radius(1.5) == 5
    assert kernel_radius(2.0) == 6


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_kernel_rejects_nonpositive_sigma(bad):
    with pytest.raises(ParameterError):
        gaussian_derivative_taps(bad, 0)
    with pytest.raises(ParameterError):
        KernelSpec(bad, "smooth")


def test_kernelspec_rejects_unknown_kind():
    with pytest.raises(ParameterError):
        KernelSpec(1.0, "laplacian")


# --- convolution -----------------------------------------------------------

def test_constant_image_stays_constant():
    img = GrayImage(np.full((20, 24), 0.37))
    out = smooth(img, 2.0)
    np.testing.assert_allclose(out.data, 0.37, atol=1e-10)


def test_impulse_response_is_outer_product():
    arr = np.zeros((21, 21))
    arr[10, 10] = 1.0
    g = gaussian_derivative_taps(1.5, 0)
    out = convolve_separable(GrayImage(arr), g, g).data
    r = len(g) // 2
    np.testing.assert_allclose(out[10 - r : 10 + r + 1, 10 - r : 10 + r + 1], np.outer(g, g), atol=1e-15)


def test_separable_matches_bruteforce_oracle_16x16():
    rng = np.random.default_rng(7)
    arr = rng.random((16, 16))
    g = gaussian_derivative_taps(1.5, 0)
    d = gaussian_derivative_taps(1.5, 1)
    for hk, vk in ((g, g), (d, g), (g, d)):
        out = convolve_separable(GrayImage(arr), hk, vk).data
        np.testing.assert_allclose(out, conv2d_bruteforce(arr, np.outer(vk, hk)), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(
    st.integers(4, 30),
    st.integers(4, 30),
    st.floats(0.3, 1.2),
    st.integers(0, 2**32 - 1),
)
def test_separable_matches_oracle_random_sizes(h, w, sigma, seed):
    rng = np.random.default_rng(seed)
    arr = rng.normal(size=(h, w))
    hk = gaussian_derivative_taps(sigma, int(rng.integers(0, 4)))
    vk = gaussian_derivative_taps(sigma, int(rng.integers(0, 4)))
    if len(hk) // 2 >= w or len(vk) // 2 >= h:
        return
    out = convolve_separable(GrayImage(arr), hk, vk).data
    np.testing.assert_allclose(out, conv2d_padded(arr, np.outer(vk, hk)), atol=1e-9)


def test_kernel_wider_than_image_is_rejected():
    g = gaussian_derivative_taps(3.0, 0)  # radius 9
    with pytest.raises(ParameterError):
        convolve_separable(GrayImage(np.zeros((9, 30))), g, g)


@settings(max_examples=25, deadline=None)
@given(
    arrays(np.float64, (12, 14), elements=st.floats(-1, 1)),
    arrays(np.float64, (12, 14), elements=st.floats(-1, 1)),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_convolution_is_linear(a, b, alpha, beta):
    g = gaussian_derivative_taps(1.2, 0)
    d = gaussian_derivative_taps(1.2, 1)
    lhs = convolve_separable(GrayImage(alpha * a + beta * b), d, g).data
    rhs = alpha * convolve_separable(GrayImage(a), d, g).data + beta * convolve_separable(GrayImage(b), d, g).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


@pytest.mark.parametrize("s1,s2", [(1.0, 1.0), (1.0, 2.0), (1.5, 2.5)])
def test_semigroup_property(s1, s2):
    rng = np.random.default_rng(3)
    img = smooth(GrayImage(rng.random((96, 96))), 1.0)
    twice = smooth(smooth(img, s1), s2).data
    once = smooth(img, math.hypot(s1, s2)).data
    m = 20
    rms = np.sqrt(np.mean((twice - once)[m:-m, m:-m] ** 2))
    assert rms < 1e-3


# --- derivatives -----------------------------------------------------------

def test_ramp_gradient():
    u = np.tile(np.arange(40, dtype=float), (30, 1))
    g = gradients(GrayImage(u), 1.5)
    r = kernel_radius(1.5)
    np.testing.assert_allclose(g.iu.data[:, r:-r], 1.0, atol=1e-6)
    np.testing.assert_allclose(g.iv.data, 0.0, atol=1e-10)
    assert g.iu.shape == g.iv.shape == (30, 40)


def test_constant_gradient_is_zero():
    g = gradients(GrayImage(np.full((15, 15), 0.8)), 1.0)
    np.testing.assert_allclose(g.iu.data, 0.0, atol=1e-10)
    np.testing.assert_allclose(g.iv.data, 0.0, atol=1e-10)


def test_sine_derivative_gaussian_attenuation():
    k = 2 * math.pi / 32
    u = np.arange(128, dtype=float)
    arr = np.tile(np.sin(k * u), (16, 1))
    iu = gradients(GrayImage(arr), 1.0).iu.data
    # crest of the derivative (cos = 1) at u = 64
    expected = k * math.exp(-(k**2) / 2)
    assert iu[8, 64] == pytest.approx(expected, rel=0.02)


@pytest.mark.parametrize("ou,ov", [(2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)])
def test_higher_derivatives_exact_on_polynomials(ou, ov):
    vv, uu = np.mgrid[0:40, 0:40].astype(float)
    arr = (uu - 20) ** ou * (vv - 20) ** ov / (math.factorial(ou) * math.factorial(ov))
    out = derivative(GrayImage(arr), 1.3, ou, ov).data
    r = kernel_radius(1.3)
    np.testing.assert_allclose(out[r:-r, r:-r], 1.0, atol=1e-8)


# --- photometric normalisation -------------------------------------------

def test_normalize_moments():
    rng = np.random.default_rng(11)
    arr = rng.normal(size=(50, 50))
    arr = 0.1 + 0.05 * (arr - arr.mean()) / arr.std()
    out = normalize_photometric(GrayImage(arr), clamp=False).data
    assert out.mean() == pytest.approx(0.5, abs=1e-9)
    assert out.std() == pytest.approx(0.2, abs=1e-9)


def test_normalize_fixed_point():
    rng = np.random.default_rng(12)
    arr = rng.random((40, 40))
    arr = 0.5 + 0.2 * (arr - arr.mean()) / arr.std()  # uniform data stays inside [0.15, 0.85]
    assert arr.min() >= 0 and arr.max() <= 1
    np.testing.assert_allclose(normalize_photometric(GrayImage(arr)).data, arr, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 20.0), st.floats(-5.0, 5.0), st.integers(0, 1000))
def test_normalize_is_affine_invariant(a, b, seed):
    arr = np.random.default_rng(seed).random((20, 20))
    ref = normalize_photometric(GrayImage(arr)).data
    out = normalize_photometric(GrayImage(a * arr + b)).data
    np.testing.assert_allclose(out, ref, atol=1e-9)


def test_normalize_zero_variance():
    with pytest.raises(DegenerateImageError):
        normalize_photometric(GrayImage(np.full((5, 5), 0.3)))


# --- warping ---------------------------------------------------------------

def test_warp_identity():
    arr = np.random.default_rng(1).random((17, 23))
    out, valid = warp_similarity(GrayImage(arr), SimilarityTransform.identity(), 23, 17)
    np.testing.assert_allclose(out.data, arr, atol=1e-12)
    assert valid.all()


def test_warp_integer_translation_exact():
    arr = np.random.default_rng(2).random((20, 20))
    out, valid = warp_similarity(GrayImage(arr), SimilarityTransform(1.0, 0.0, 3.0, -2.0), 20, 20)
    # out(u, v) = arr(u - 3, v + 2)
    np.testing.assert_array_equal(out.data[0:18, 3:20], arr[2:20, 0:17])
    assert valid[0:18, 3:20].all()
    assert not valid[:, 0:3].any()
    assert (out.data[~valid] == 0).all()


def test_warp_upsample_matches_nearest_oracle():
    square = np.indices((8, 8)).sum(axis=0) % 2  # 1-pixel squares, each 2 px wide after zoom
    checker = nearest_upsample(square.astype(float), 2)  # 16x16, 2-pixel checkerboard
    t = SimilarityTransform(2.0, 0.0, 0.5, 0.5)  # pixel centres map to pixel centres
    out, valid = warp_similarity(GrayImage(checker), t, 32, 32)
    oracle = nearest_upsample(checker, 2)
    assert np.all(np.abs(out.data - oracle)[valid] <= 0.5)


def test_warp_rejects_nonpositive_scale():
    with pytest.raises(ParameterError):
        SimilarityTransform(0.0, 0.0, 0.0, 0.0)
