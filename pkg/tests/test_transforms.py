import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scalematch.errors import DegenerateConfigurationError, ParameterError
from scalematch.transforms import (
    SimilarityTransform,
    TransformModel,
    estimate_affine,
    estimate_homography,
    estimate_model,
    estimate_similarity,
)

sims = st.builds(
    SimilarityTransform,
    st.floats(0.05, 20),
    st.floats(-math.pi, math.pi),
    st.floats(-500, 500),
    st.floats(-500, 500),
)


def _random_points(n, seed=0, lo=0, hi=200):
    return np.random.default_rng(seed).uniform(lo, hi, (n, 2))


def test_hand_solved_pair():
    t = estimate_similarity([(0, 0), (1, 0)], [(3, 4), (3, 6)])
    assert t.p == pytest.approx(0, abs=1e-12)
    assert t.q == pytest.approx(2)
    assert t.h == pytest.approx(2)
    assert t.theta == pytest.approx(math.pi / 2)
    assert (t.a, t.b) == pytest.approx((3, 4))


def test_identity_pairs():
    pts = _random_points(5)
    t = estimate_similarity(pts, pts)
    assert t.h == pytest.approx(1, abs=1e-12)
    assert t.theta == pytest.approx(0, abs=1e-12)
    assert (t.a, t.b) == pytest.approx((0, 0), abs=1e-12)


@settings(max_examples=60)
@given(sims, st.integers(0, 10_000))
def test_similarity_recovery(t, seed):
    src = _random_points(20, seed)
    est = estimate_similarity(src, t.apply_points(src))
    np.testing.assert_allclose(est.matrix, t.matrix, atol=1e-9 * max(1.0, abs(t.a), abs(t.b)))


@settings(max_examples=40)
@given(sims, st.floats(-math.pi, math.pi))
def test_similarity_estimation_equivariance(t, rho):
    src = _random_points(10, 3, -50, 50)
    dst = t.apply_points(src)
    q = SimilarityTransform(1.0, rho, 0.0, 0.0)
    est = estimate_similarity(q.apply_points(src), dst)
    expected = t.compose(q.inverse())
    np.testing.assert_allclose(est.matrix, expected.matrix, atol=1e-8 * max(1.0, abs(t.a), abs(t.b)))


@settings(max_examples=60)
@given(sims)
def test_compose_with_inverse_is_identity(t):
    np.testing.assert_allclose(t.compose(t.inverse()).matrix, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(t.inverse().compose(t).matrix, np.eye(3), atol=1e-9)


def test_similarity_linear_parameters():
    t = SimilarityTransform(2.0, math.pi / 6, 1.0, -1.0)
    assert t.p == pytest.approx(2 * math.cos(math.pi / 6))
    assert t.q == pytest.approx(2 * math.sin(math.pi / 6))
    back = SimilarityTransform.from_linear(t.p, t.q, t.a, t.b)
    assert back.h == pytest.approx(2.0) and back.theta == pytest.approx(math.pi / 6)


def test_coincident_sources_are_degenerate():
    with pytest.raises(DegenerateConfigurationError):
        estimate_similarity([(1, 1), (1, 1)], [(0, 0), (2, 2)])
    with pytest.raises(DegenerateConfigurationError):
        estimate_similarity([(1, 1)], [(0, 0)])


def test_homography_of_pure_scaling():
    sq = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], float)
    m = estimate_homography(sq, 2 * sq)
    np.testing.assert_allclose(m.matrix, np.diag([2.0, 2.0, 1.0]), atol=1e-9)


def test_homography_random_projective():
    h = np.array([[1.2, 0.1, 5.0], [-0.05, 0.9, -3.0], [1e-3, -5e-4, 1.0]])
    model = TransformModel("homography", h)
    src = _random_points(12, 1)
    est = estimate_homography(src, model.apply_points(src))
    np.testing.assert_allclose(est.matrix, h, atol=1e-9)


def test_homography_against_opencv():
    cv2 = pytest.importorskip("cv2")
    src = np.array([(3, 4), (120, 10), (100, 90), (5, 70)], np.float64)
    dst = np.array([(10, 12), (140, 5), (130, 120), (2, 80)], np.float64)
    ref = cv2.getPerspectiveTransform(src.astype(np.float32), dst.astype(np.float32))
    est = estimate_homography(src, dst)
    np.testing.assert_allclose(est.matrix, ref / ref[2, 2], rtol=1e-4, atol=1e-6)


def test_homography_of_similarity_pair():
    t = SimilarityTransform(0.3, 0.7, 20, -4)
    src = _random_points(15, 2)
    est = estimate_homography(src, t.apply_points(src))
    np.testing.assert_allclose(est.matrix, t.matrix, atol=1e-6)


def test_collinear_homography_is_degenerate():
    src = np.array([(0, 0), (1, 1), (2, 2), (3, 3)], float)
    with pytest.raises(DegenerateConfigurationError):
        estimate_homography(src, src * 2)


def test_affine_recovery():
    a = np.array([[1.3, 0.2, 4.0], [-0.4, 0.8, 1.0], [0, 0, 1]])
    model = TransformModel("affine", a)
    src = _random_points(10, 4)
    est = estimate_affine(src, model.apply_points(src))
    np.testing.assert_allclose(est.matrix, a, atol=1e-9)
    with pytest.raises(DegenerateConfigurationError):
        estimate_affine([(0, 0), (1, 1), (2, 2)], [(0, 0), (1, 0), (2, 3)])


def test_model_properties():
    t = SimilarityTransform(0.25, -0.5, 3, 4).to_model()
    assert t.scale() == pytest.approx(0.25)
    assert t.rotation() == pytest.approx(-0.5)
    assert t.minimal_matches == 2
    assert len(t.parameters) == 4
    assert estimate_model(_random_points(4), _random_points(4, 1), "affine").minimal_matches == 3
    inv = t.inverse()
    pts = _random_points(5)
    np.testing.assert_allclose(inv.apply_points(t.apply_points(pts)), pts, atol=1e-9)


def test_singular_model_rejected():
    with pytest.raises(DegenerateConfigurationError):
        TransformModel("homography", np.array([[1, 2, 0], [2, 4, 0], [0, 0, 1.0]]))
    with pytest.raises(ParameterError):
        estimate_model(_random_points(4), _random_points(4), "fundamental")
