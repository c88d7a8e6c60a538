"""Synthetic stand-ins for the learned parts of the pipeline.

``oracle_predict`` plays the role of the confidence-map head. ``render_scene``
produces stereo feature maps and a point cloud for randomly placed boxes.
Each part gets its own feature channel and is drawn as a Gaussian blob at
its projection, so stereo aggregation can be checked without any learning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .box_geom import Box3D, bev_intersection, parts_of, to_object_frame
from .confidence_maps import DEFAULT_SIGMA, PartConfidenceMaps, encode
from .feature_sampling import FeatureMap, project_points
from .kitti_io import CameraRig, PointCloud

MAX_RETRIES = 100


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleNoise:
    map_noise_std: float = 0.0
    dropout_parts: float = 0.0

    def __post_init__(self):
        if self.map_noise_std < 0:
            raise ValueError("map_noise_std must be >= 0")
        if not 0.0 <= self.dropout_parts <= 1.0:
            raise ValueError("dropout_parts must be in [0, 1]")


def oracle_predict(grid, gt, sigma_cells=DEFAULT_SIGMA, noise=None, rng=None, dropped=None):
    """Ground-truth maps with optional Gaussian noise and suppressed parts.

    ``dropped`` forces a specific set of part indices to zero on top of the
    random dropout.
    """
    noise = noise or OracleNoise()
    maps = encode(grid, gt, sigma_cells).maps
    if noise.map_noise_std > 0 or noise.dropout_parts > 0:
        if rng is None:
            raise ValueError("a noisy oracle needs an rng")
        if noise.map_noise_std > 0:
            maps = maps + rng.normal(0.0, noise.map_noise_std, size=maps.shape)
        if noise.dropout_parts > 0:
            drop = rng.random(maps.shape[0]) < noise.dropout_parts
            maps[drop] = 0.0
        maps = np.clip(maps, 0.0, 1.0)
    if dropped is not None:
        maps = maps.copy()
        maps[list(dropped)] = 0.0
    return PartConfidenceMaps(maps, sigma_cells)


def rectified_rig(focal=721.5377, cx=609.5593, cy=172.854, baseline=0.54):
    """An ideal rectified stereo pair with KITTI-like intrinsics."""
    k = np.array([[focal, 0.0, cx, 0.0], [0.0, focal, cy, 0.0], [0.0, 0.0, 1.0, 0.0]])
    right = k.copy()
    right[0, 3] = -focal * baseline
    return CameraRig(k, right)


@dataclass(frozen=True)
class SceneSpec:
    n_boxes: int = 3
    depth_range: tuple = (8.0, 40.0)
    lateral_range: tuple = (-8.0, 8.0)
    ground_y: float = 1.65  # camera height above the road
    size_mean: tuple = (1.52, 1.63, 3.88)  # h, w, l
    size_std: tuple = (0.08, 0.08, 0.3)
    yaw_range: tuple = (-math.pi, math.pi)
    rig: CameraRig = None
    image_size: tuple = (1242, 375)  # width, height
    stride: float = 4.0
    blob_sigma: float = 3.0  # feature cells
    face_density: float = 200.0  # points per m^2

    def __post_init__(self):
        if self.rig is None:
            object.__setattr__(self, "rig", rectified_rig())
        for name in ("depth_range", "lateral_range", "yaw_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must be a nonempty interval")
        if self.n_boxes < 0:
            raise ValueError("n_boxes must be >= 0")

    @property
    def feature_shape(self):
        w, h = self.image_size
        return int(math.ceil(h / self.stride)), int(math.ceil(w / self.stride))


@dataclass(frozen=True)
class Scene:
    boxes: list
    left: FeatureMap
    right: FeatureMap
    cloud: PointCloud


def _visible(box, spec):
    corners = parts_of(box)
    w, h = spec.image_size
    for proj in (spec.rig.p_left, spec.rig.p_right):
        _, front = project_points(corners, proj)
        if not front.all() or np.any(corners[:, 2] < 1.0):
            return False
        uv, _ = project_points(box.center, proj)
        if not (0 <= uv[0, 0] < w and 0 <= uv[0, 1] < h):
            return False
    return True


def sample_box(spec, rng, existing=()):
    for _ in range(MAX_RETRIES):
        z = rng.uniform(*spec.depth_range)
        x = rng.uniform(*spec.lateral_range)
        size = np.maximum(rng.normal(spec.size_mean, spec.size_std), 0.5)
        theta = rng.uniform(*spec.yaw_range)
        h, w, l = (float(v) for v in size)
        box = Box3D(x, spec.ground_y - h / 2.0, z, h, w, l, theta)
        if not _visible(box, spec):
            continue
        if any(bev_intersection(box, other) > 0.0 for other in existing):
            continue
        return box
    raise SceneGenerationError(f"no valid box placement after {MAX_RETRIES} attempts")


def render_feature_map(boxes, proj, spec):
    fh, fw = spec.feature_shape
    data = np.zeros((fh, fw, 9))
    ys = np.arange(fh, dtype=np.float64)
    xs = np.arange(fw, dtype=np.float64)
    two_s2 = 2.0 * spec.blob_sigma ** 2
    for box in boxes:
        uv, front = project_points(parts_of(box), proj)
        for m in range(9):
            if not front[m]:
                continue
            fx, fy = uv[m] / spec.stride
            gy = np.exp(-((ys - fy) ** 2) / two_s2)
            gx = np.exp(-((xs - fx) ** 2) / two_s2)
            data[:, :, m] += np.outer(gy, gx)
    return FeatureMap(data, spec.stride)


def sample_box_surface(box, density, rng):
    """Uniform samples on the six faces of ``box``, camera frame, shape (N, 3)."""
    hl, hh, hw = box.l / 2.0, box.h / 2.0, box.w / 2.0
    faces = [  # (fixed axis, sign, the two free half-extents' axes)
        (0, hl, (1, 2)), (0, -hl, (1, 2)),
        (1, hh, (0, 2)), (1, -hh, (0, 2)),
        (2, hw, (0, 1)), (2, -hw, (0, 1)),
    ]
    half = np.array([hl, hh, hw])
    chunks = []
    for axis, value, (a, b) in faces:
        area = 4.0 * half[a] * half[b]
        n = max(int(math.ceil(area * density)), 1)
        pts = np.empty((n, 3))
        pts[:, axis] = value
        pts[:, a] = rng.uniform(-half[a], half[a], n)
        pts[:, b] = rng.uniform(-half[b], half[b], n)
        chunks.append(pts)
    local = np.concatenate(chunks)
    c, s = math.cos(box.theta), math.sin(box.theta)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return local @ rot.T + box.center


def render_scene(spec, rng):
    boxes = []
    for _ in range(spec.n_boxes):
        boxes.append(sample_box(spec, rng, boxes))
    left = render_feature_map(boxes, spec.rig.p_left, spec)
    right = render_feature_map(boxes, spec.rig.p_right, spec)
    if boxes:
        xyz = np.concatenate([sample_box_surface(b, spec.face_density, rng) for b in boxes])
        cloud = PointCloud(np.column_stack([xyz, np.ones(len(xyz))]))
    else:
        cloud = PointCloud()
    return Scene(boxes, left, right, cloud)


def bbox2d_of(box, proj, image_size):
    """Clipped 2D box of the projected corners and the truncated area fraction."""
    uv, _ = project_points(parts_of(box)[1:], proj)
    lo, hi = uv.min(axis=0), uv.max(axis=0)
    w, h = image_size
    clo = np.clip(lo, 0, [w - 1, h - 1])
    chi = np.clip(hi, 0, [w - 1, h - 1])
    full = float(np.prod(hi - lo))
    kept = float(np.prod(np.maximum(chi - clo, 0)))
    trunc = 0.0 if full <= 0 else 1.0 - kept / full
    return (float(clo[0]), float(clo[1]), float(chi[0]), float(chi[1])), trunc


def points_near_faces(points, box, tol):
    """Mask of points within ``tol`` of the surface of ``box``."""
    local = np.abs(to_object_frame(points, box))
    half = np.array([box.l, box.h, box.w]) / 2.0
    inside = np.all(local <= half + tol, axis=1)
    near = np.any(np.abs(local - half) <= tol, axis=1)
    return inside & near
