import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from app.schemas import ScoreParams
from app.score import (
    LandmarkChannels,
    Point,
    euclid_dist,
    score_array,
    score_fn,
    score_to_distance,
    target_matrix,
    target_vector,
)


def test_score_breakpoints_exact():
    assert score_fn(0) == 1.0
    assert score_fn(20) == 0.25
    assert score_fn(40) == 0.0
    assert score_fn(10) == 0.625
    assert score_fn(60) == 0.0


def test_score_monotone_on_grid():
    grid = [i / 10 for i in range(601)]
    values = [score_fn(d) for d in grid]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_score_rejects_negative_distance():
    with pytest.raises(ValueError):
        score_fn(-0.5)


def test_score_params_validation():
    with pytest.raises(ValueError):
        ScoreParams(d_inner=40, d_outer=20)
    with pytest.raises(ValueError):
        ScoreParams(s_knee=1.5)


@given(st.floats(min_value=0, max_value=100, allow_nan=False))
def test_score_array_matches_scalar(d):
    assert score_array(np.array([d]))[0] == pytest.approx(score_fn(d), abs=1e-12)


@given(st.floats(min_value=0, max_value=39.9, allow_nan=False))
def test_score_to_distance_inverts_cone(d):
    assert score_to_distance(score_fn(d)) == pytest.approx(d, abs=1e-9)


def test_score_to_distance_clamps():
    assert score_to_distance(1.3) == 0.0
    assert score_to_distance(-0.2) == 40.0
    assert score_to_distance(0.0) == 40.0


def test_euclid_dist():
    assert euclid_dist(Point(0, 0), Point(3, 4)) == 5.0


def test_target_vector_uses_nearest_point_per_channel():
    landmarks = LandmarkChannels.from_points([[(10, 10), (50, 10)], [(30, 30)]], names=("a", "b"))
    v = target_vector(Point(48, 10), landmarks)
    assert v[0] == pytest.approx(score_fn(2))
    assert v[1] == pytest.approx(score_fn(euclid_dist((48, 10), (30, 30))))


def test_target_vector_far_point_is_zero():
    landmarks = LandmarkChannels.from_points([[(0, 0)]], names=("a",))
    assert target_vector(Point(100, 100), landmarks)[0] == 0.0


def test_target_vector_empty_channel_is_error():
    landmarks = LandmarkChannels([("a", [Point(1, 1)]), ("b", [])])
    with pytest.raises(ValueError, match="empty"):
        target_vector(Point(0, 0), landmarks)


def test_target_matrix_matches_target_vector():
    landmarks = LandmarkChannels.from_points([[(20, 30), (60, 30)], [(40, 50)], [(30, 70), (50, 70)]])
    pts = np.array([[20, 30], [41, 52], [45, 70], [90, 90]])
    mat = target_matrix(pts, landmarks, dtype=np.float64)
    for row, p in zip(mat, pts):
        np.testing.assert_allclose(row, target_vector(Point(*p), landmarks))


def test_landmark_channels_needs_a_channel():
    with pytest.raises(ValueError):
        LandmarkChannels([])


def test_duplicate_landmark_does_not_change_target():
    single = LandmarkChannels.from_points([[(10, 10), (50, 40)], [(30, 30)]], names=("a", "b"))
    doubled = LandmarkChannels.from_points([[(10, 10), (10, 10), (50, 40)], [(30, 30), (30, 30)]], names=("a", "b"))
    for p in (Point(12, 9), Point(40, 35), Point(90, 90)):
        np.testing.assert_array_equal(target_vector(p, single), target_vector(p, doubled))


@given(
    st.integers(0, 80),
    st.integers(0, 80),
    st.integers(-500, 500),
    st.integers(-500, 500),
)
def test_target_invariant_under_joint_translation(x, y, dx, dy):
    landmarks = LandmarkChannels.from_points([[(20, 30), (60, 30)], [(40, 50)], [(30, 70)]])
    moved = landmarks.shifted(dx, dy)
    assert moved.points(1) == [Point(40 + dx, 50 + dy)]
    np.testing.assert_array_equal(
        target_vector(Point(x, y), landmarks), target_vector(Point(x + dx, y + dy), moved)
    )


def test_score_map_around_one_landmark():
    landmarks = LandmarkChannels.from_points([[(42, 42)]], names=("a",))
    ys, xs = np.mgrid[0:85, 0:85]
    grid = np.stack([xs.ravel(), ys.ravel()], axis=1)
    image = target_matrix(grid, landmarks, dtype=np.float64)[:, 0].reshape(85, 85)
    assert image[42, 42] == 1.0
    for x, y in ((62, 42), (22, 42), (42, 62), (42, 22), (54, 58)):
        assert image[y, x] == 0.25
    dist = np.hypot(xs - 42, ys - 42)
    assert np.all(image[dist >= 40] == 0.0)
    assert np.all(image[dist < 40] > 0.0)
    np.testing.assert_allclose(image, image[::-1, :], atol=1e-12)
    np.testing.assert_allclose(image, image.T, atol=1e-12)
