import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_car
from oracles import mc_iou
from vernier.box_geom import (
    Box3D, Pose2D, apply_pose2d, bev_iou, box_from_label, box_from_parts, homography_of,
    iou_3d, label_from_box, parts_of,
)


def test_homography_identity():
    np.testing.assert_array_equal(homography_of(Box3D(0, 0, 0, 1, 1, 1, 0)), np.eye(4))


def test_homography_quarter_turn():
    H = homography_of(Box3D(0, 0, 0, 1, 1, 1, math.pi / 2))
    np.testing.assert_allclose(H[:3, :3], [[0, 0, 1], [0, 1, 0], [-1, 0, 0]], atol=1e-15)


def test_homography_applied_to_front_point():
    L = 4.0
    H = homography_of(Box3D(1, 2, 3, 1, 1, L, 0.3))
    out = H @ np.array([L / 2, 0, 0, 1])
    np.testing.assert_allclose(out[:3], [1 + math.cos(0.3) * L / 2, 2, 3 - math.sin(0.3) * L / 2])


def test_unit_cube_parts():
    parts = parts_of(Box3D(0, 0, 0, 1, 1, 1, 0))
    np.testing.assert_array_equal(parts[0], [0, 0, 0])
    assert {tuple(p) for p in parts[1:]} == {
        (sx, sy, sz) for sx in (0.5, -0.5) for sy in (0.5, -0.5) for sz in (0.5, -0.5)
    }
    # Column order of the part matrix: x sign, then alternating y, then z.
    np.testing.assert_array_equal(parts[1], [0.5, -0.5, 0.5])
    np.testing.assert_array_equal(parts[4], [0.5, 0.5, -0.5])
    np.testing.assert_array_equal(parts[8], [-0.5, 0.5, -0.5])


def test_parts_follow_translation():
    base = parts_of(Box3D(0, 0, 0, 1, 1, 1, 0))
    moved = parts_of(Box3D(10, 0, 20, 1, 1, 1, 0))
    np.testing.assert_allclose(moved - base, np.tile([10, 0, 20], (9, 1)))


def test_corner_one_by_hand():
    box = Box3D(5, 1, 20, 1.5, 1.6, 3.9, math.pi / 4)
    c = s = math.sqrt(0.5)
    ox, oy, oz = 3.9 / 2, -1.5 / 2, 1.6 / 2
    expected = [c * ox + s * oz + 5, oy + 1, -s * ox + c * oz + 20]
    np.testing.assert_allclose(parts_of(box)[1], expected, atol=1e-12)


def test_parts_center_is_corner_mean():
    rng = np.random.default_rng(0)
    for _ in range(20):
        parts = parts_of(random_car(rng))
        np.testing.assert_allclose(parts[0], parts[1:].mean(axis=0), atol=1e-9)
        for a, b in [(1, 8), (2, 7), (3, 6), (4, 5)]:
            np.testing.assert_allclose((parts[a] + parts[b]) / 2, parts[0], atol=1e-9)


def test_box_from_parts_round_trip():
    rng = np.random.default_rng(1)
    for _ in range(50):
        box = random_car(rng)
        back = box_from_parts(parts_of(box))
        np.testing.assert_allclose(back.as_array(), box.as_array(), atol=1e-9)


def test_theta_normalised():
    assert Box3D(0, 0, 0, 1, 1, 1, 3 * math.pi / 2).theta == pytest.approx(-math.pi / 2)
    with pytest.raises(ValueError):
        Box3D(0, 0, 0, 0, 1, 1, 0)


def test_bev_iou_cases():
    a = Box3D(0, 0, 0, 1, 2, 2, 0)
    assert bev_iou(a, a) == pytest.approx(1.0, abs=1e-12)
    assert bev_iou(a, a.replace(x=100)) == 0.0
    # Two 2x2 squares overlapping on a 1x2 strip: 2 / (4 + 4 - 2).
    assert bev_iou(a, a.replace(x=1)) == pytest.approx(1 / 3, abs=1e-12)


def test_iou_3d_analytic():
    a = Box3D(0, 0, 0, 2, 2, 2, 0.4)
    assert iou_3d(a, a) == pytest.approx(1.0, abs=1e-9)
    assert iou_3d(a, a.replace(y=1.0)) == pytest.approx(1 / 3, abs=1e-9)
    assert iou_3d(a, a.replace(y=2.0)) == 0.0


def test_iou_3d_matches_monte_carlo():
    rng = np.random.default_rng(2)
    for _ in range(10):
        a = random_car(rng)
        b = a.replace(x=a.x + rng.normal(0, 0.5), z=a.z + rng.normal(0, 0.5),
                      y=a.y + rng.normal(0, 0.2), theta=a.theta + rng.normal(0, 0.4))
        est = mc_iou(tuple(a.as_array()), tuple(b.as_array()), 200_000, rng)
        assert abs(iou_3d(a, b) - est) < 0.01


boxes = st.builds(
    Box3D,
    st.floats(-20, 20), st.floats(-2, 2), st.floats(-20, 20),
    st.floats(0.5, 3), st.floats(0.5, 3), st.floats(0.5, 6), st.floats(-math.pi, math.pi),
)


def _near(a):
    return st.builds(
        lambda dx, dy, dz, dt, h, w, l: Box3D(a.x + dx, a.y + dy, a.z + dz, h, w, l, a.theta + dt),
        st.floats(-2, 2), st.floats(-1, 1), st.floats(-2, 2), st.floats(-1, 1),
        st.floats(0.5, 3), st.floats(0.5, 3), st.floats(0.5, 6),
    )


pairs = boxes.flatmap(lambda a: st.tuples(st.just(a), _near(a)))


@given(pairs, st.floats(-50, 50), st.floats(-50, 50), st.floats(-math.pi, math.pi))
@settings(max_examples=200)
def test_iou_symmetry_and_invariance(pair, tx, tz, yaw):
    a, b = pair
    for fn in (bev_iou, iou_3d):
        base = fn(a, b)
        assert 0.0 <= base <= 1.0
        assert fn(b, a) == pytest.approx(base, abs=1e-9)
        shifted = [box.replace(x=box.x + tx, z=box.z + tz) for box in (a, b)]
        assert fn(*shifted) == pytest.approx(base, abs=1e-9)
        pose = Pose2D.from_angle(yaw, (0.3, -0.7))
        rotated = [apply_pose2d(box, pose) for box in (a, b)]
        assert fn(*rotated) == pytest.approx(base, abs=1e-9)


@given(pairs)
def test_iou_3d_bounded_by_bev_when_heights_align(pair):
    a, b = pair
    b = b.replace(y=a.y, h=a.h)
    assert iou_3d(a, b) == pytest.approx(bev_iou(a, b), abs=1e-9)
    assert iou_3d(*pair) <= 1.0


def test_apply_pose_cases():
    box = Box3D(5, 1, 20, 1.5, 1.6, 3.9, 0.2)
    assert apply_pose2d(box, Pose2D.identity()) == box
    moved = apply_pose2d(box, Pose2D.from_angle(0.0, (0.3, -0.2)))
    assert (moved.x, moved.z, moved.theta) == pytest.approx((5.3, 19.8, 0.2))
    pose = Pose2D.from_angle(0.1)
    turned = apply_pose2d(box, pose)
    np.testing.assert_allclose([turned.x, turned.z], pose.rot @ [5, 20])
    assert turned.theta == pytest.approx(0.3)
    assert (turned.y, turned.h, turned.w, turned.l) == (box.y, box.h, box.w, box.l)


def test_pose_rotation_turns_parts_consistently():
    # Rotating every part by the pose gives the parts of the posed box.
    box = Box3D(2, 1, 15, 1.5, 1.6, 3.9, -0.7)
    pose = Pose2D.from_angle(0.4, (1.0, -2.0))
    moved_parts = pose.apply(parts_of(box)[:, [0, 2]])
    np.testing.assert_allclose(parts_of(apply_pose2d(box, pose))[:, [0, 2]], moved_parts, atol=1e-12)


@given(boxes, st.floats(-3, 3), st.floats(-5, 5), st.floats(-5, 5),
       st.floats(-3, 3), st.floats(-5, 5), st.floats(-5, 5))
def test_apply_pose_composes(box, a1, x1, z1, a2, x2, z2):
    p1 = Pose2D.from_angle(a1, (x1, z1))
    p2 = Pose2D.from_angle(a2, (x2, z2))
    lhs = apply_pose2d(apply_pose2d(box, p1), p2)
    rhs = apply_pose2d(box, p2.compose(p1))
    assert lhs.x == pytest.approx(rhs.x, abs=1e-9)
    assert lhs.z == pytest.approx(rhs.z, abs=1e-9)
    assert math.cos(lhs.theta - rhs.theta) == pytest.approx(1.0, abs=1e-12)


def test_pose_invariants():
    pose = Pose2D.from_angle(1.234)
    np.testing.assert_allclose(pose.rot.T @ pose.rot, np.eye(2), atol=1e-12)
    assert np.linalg.det(pose.rot) == pytest.approx(1.0)


def test_label_box_conversion_round_trip(fixtures):
    from vernier.kitti_io import parse_labels

    for rec in parse_labels((fixtures / "label_000008.txt").read_text()):
        if rec.category == "DontCare":
            continue
        box = box_from_label(rec)
        assert box.y == pytest.approx(rec.location[1] - rec.dims[0] / 2)
        back = label_from_box(box, template=rec)
        assert back.location == pytest.approx(rec.location)
        assert back.dims == pytest.approx(rec.dims)
