"""Upright 3D box algebra in the rectified camera frame.

Conventions: x right, y down, z forward. A box rotates about the y axis by
``theta``; its length runs along the object x axis, height along y and width
along z, so that the object-to-camera transform is::

    [[ cos t, 0, sin t, x],
     [     0, 1,     0, y],
     [-sin t, 0, cos t, z],
     [     0, 0,     0, 1]]
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def normalize_angle(angle):
    return math.atan2(math.sin(angle), math.cos(angle))


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    z: float
    h: float
    w: float
    l: float
    theta: float

    def __post_init__(self):
        if not (self.h > 0 and self.w > 0 and self.l > 0):
            raise ValueError(f"box sizes must be positive, got h={self.h} w={self.w} l={self.l}")
        for name in ("x", "y", "z", "h", "w", "l"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @property
    def center(self):
        return np.array([self.x, self.y, self.z])

    @property
    def volume(self):
        return self.h * self.w * self.l

    def as_array(self):
        return np.array([self.x, self.y, self.z, self.h, self.w, self.l, self.theta])

    @classmethod
    def from_array(cls, arr):
        return cls(*(float(v) for v in arr))

    def replace(self, **changes):
        vals = dict(x=self.x, y=self.y, z=self.z, h=self.h, w=self.w, l=self.l, theta=self.theta)
        vals.update(changes)
        return Box3D(**vals)


@dataclass(frozen=True)
class Pose2D:
    """Rigid motion of the ground (x-z) plane.

    ``rot`` acts on column vectors ``(x, z)``. Its angle follows the box yaw
    convention, so a pose of angle ``a`` turns a box of yaw ``t`` into one of
    yaw ``t + a``.
    """

    rot: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rot, dtype=np.float64).reshape(2, 2)
        trans = np.array(self.trans, dtype=np.float64).reshape(2)
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rot", rot)
        object.__setattr__(self, "trans", trans)

    @classmethod
    def from_angle(cls, angle, trans=(0.0, 0.0)):
        c, s = math.cos(angle), math.sin(angle)
        return cls(np.array([[c, s], [-s, c]]), np.asarray(trans, dtype=np.float64))

    @classmethod
    def identity(cls):
        return cls.from_angle(0.0)

    @property
    def angle(self):
        return math.atan2(self.rot[0, 1], self.rot[0, 0])

    def compose(self, first):
        """Return ``self o first``: apply ``first``, then ``self``."""
        return Pose2D(self.rot @ first.rot, self.rot @ first.trans + self.trans)

    def apply(self, pts_xz):
        pts = np.asarray(pts_xz, dtype=np.float64)
        return pts @ self.rot.T + self.trans


def homography_of(box):
    c, s = math.cos(box.theta), math.sin(box.theta)
    return np.array([
        [c, 0.0, s, box.x],
        [0.0, 1.0, 0.0, box.y],
        [-s, 0.0, c, box.z],
        [0.0, 0.0, 0.0, 1.0],
    ])


def part_offsets(l, h, w):
    """Object-frame coordinates of the center and 8 corners, shape (3, 9)."""
    hl, hh, hw = l / 2.0, h / 2.0, w / 2.0
    return np.array([
        [0.0, hl, hl, hl, hl, -hl, -hl, -hl, -hl],
        [0.0, -hh, hh, -hh, hh, -hh, hh, -hh, hh],
        [0.0, hw, hw, -hw, -hw, hw, hw, -hw, -hw],
    ])


def parts_of(box):
    """Camera-frame center and corners of ``box`` as a (9, 3) array."""
    obj = np.vstack([part_offsets(box.l, box.h, box.w), np.ones((1, 9))])
    return (homography_of(box) @ obj)[:3].T


def box_from_parts(parts):
    """Fit an upright box back to a (9, 3) part array produced by :func:`parts_of`."""
    parts = np.asarray(parts, dtype=np.float64)
    center = parts[1:].mean(axis=0)
    l = np.linalg.norm(parts[1] - parts[5])
    h = np.linalg.norm(parts[2] - parts[1])
    w = np.linalg.norm(parts[1] - parts[3])
    along = parts[1] - parts[5]
    theta = math.atan2(-along[2], along[0])
    return Box3D(center[0], center[1], center[2], h, w, l, theta)


def bev_corners(box):
    """Footprint of the box in the x-z plane, counter-clockwise, shape (4, 2)."""
    c, s = math.cos(box.theta), math.sin(box.theta)
    hl, hw = box.l / 2.0, box.w / 2.0
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    x = box.x + c * local[:, 0] + s * local[:, 1]
    z = box.z - s * local[:, 0] + c * local[:, 1]
    pts = np.column_stack([x, z])
    if _signed_area(pts) < 0:
        pts = pts[::-1]
    return pts


def _signed_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _clip(subject, clipper):
    # Sutherland-Hodgman; both polygons convex and counter-clockwise.
    output = [tuple(p) for p in subject]
    n = len(clipper)
    for i in range(n):
        if not output:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp, output = output, []
        prev = inp[-1]
        s_prev = side(prev)
        for cur in inp:
            s_cur = side(cur)
            if s_cur >= 0:
                if s_prev < 0:
                    output.append(_cross_point(prev, cur, s_prev, s_cur))
                output.append(cur)
            elif s_prev >= 0:
                output.append(_cross_point(prev, cur, s_prev, s_cur))
            prev, s_prev = cur, s_cur
    return output


def _cross_point(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def polygon_intersection_area(a, b):
    poly = _clip(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    if len(poly) < 3:
        return 0.0
    return max(_signed_area(np.array(poly)), 0.0)


def bev_intersection(a, b):
    return polygon_intersection_area(bev_corners(a), bev_corners(b))


def bev_iou(a, b):
    inter = bev_intersection(a, b)
    union = a.l * a.w + b.l * b.w - inter
    if inter <= 0.0 or union <= 0.0:
        return 0.0
    return min(inter / union, 1.0)


def vertical_overlap(a, b):
    lo = max(a.y - a.h / 2.0, b.y - b.h / 2.0)
    hi = min(a.y + a.h / 2.0, b.y + b.h / 2.0)
    return max(hi - lo, 0.0)


def iou_3d(a, b):
    dy = vertical_overlap(a, b)
    if dy <= 0.0:
        return 0.0
    inter = bev_intersection(a, b) * dy
    if inter <= 0.0:
        return 0.0
    return min(inter / (a.volume + b.volume - inter), 1.0)


def apply_pose2d(box, pose):
    x, z = pose.apply([box.x, box.z])
    return box.replace(x=float(x), z=float(z), theta=box.theta + pose.angle)


def points_in_box(points, box, margin=0.0):
    """Boolean mask of (N, 3) camera-frame points inside ``box`` (closed test)."""
    local = to_object_frame(points, box)
    return (
        (np.abs(local[:, 0]) <= box.l / 2.0 + margin)
        & (np.abs(local[:, 1]) <= box.h / 2.0 + margin)
        & (np.abs(local[:, 2]) <= box.w / 2.0 + margin)
    )


def to_object_frame(points, pose_box):
    """Express camera-frame points in the object frame of ``pose_box``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    c, s = math.cos(pose_box.theta), math.sin(pose_box.theta)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return (pts - pose_box.center) @ rot


# KITTI labels store the bottom-face center; Box3D stores the geometric center.

def box_from_label(rec):
    h, w, l = rec.dims
    x, y, z = rec.location
    return Box3D(x, y - h / 2.0, z, h, w, l, rec.rotation_y)


def label_from_box(box, template=None, category="Car", score=None):
    from .kitti_io import LabelRecord

    alpha = normalize_angle(box.theta - math.atan2(box.x, box.z))
    if template is not None:
        category = template.category
        trunc, occ, bbox = template.truncation, template.occlusion, template.bbox2d
    else:
        trunc, occ, bbox = 0.0, 0, (0.0, 0.0, 0.0, 0.0)
    return LabelRecord(
        category=category,
        truncation=trunc,
        occlusion=occ,
        alpha=alpha,
        bbox2d=tuple(bbox),
        dims=(box.h, box.w, box.l),
        location=(box.x, box.y + box.h / 2.0, box.z),
        rotation_y=box.theta,
        score=score,
    )
