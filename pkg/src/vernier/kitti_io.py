"""Readers and writers for the KITTI object-detection file formats.

Three formats are covered: calibration text (``calib/*.txt``), label text
(``label_2/*.txt``, 15 fields, 16 with a detection score) and velodyne
binaries (packed little-endian float32, four values per point).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class KittiFormatError(ValueError):
    """Raised when a KITTI file does not follow the expected layout."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class CameraRig:
    p_left: np.ndarray
    p_right: np.ndarray
    r0_rect: Optional[np.ndarray] = None
    tr_velo_to_cam: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("p_left", "p_right"):
            mat = np.asarray(getattr(self, name), dtype=np.float64).reshape(3, 4)
            if mat[0, 0] == 0 or mat[1, 1] == 0:
                raise ValueError(f"{name} has a zero focal entry")
            mat.flags.writeable = False
            object.__setattr__(self, name, mat)
        if self.r0_rect is not None:
            object.__setattr__(self, "r0_rect", np.asarray(self.r0_rect, dtype=np.float64).reshape(3, 3))
        if self.tr_velo_to_cam is not None:
            object.__setattr__(
                self, "tr_velo_to_cam", np.asarray(self.tr_velo_to_cam, dtype=np.float64).reshape(3, 4)
            )

    @property
    def baseline(self):
        """Horizontal baseline in meters, recovered from the P3 translation term."""
        return (self.p_left[0, 3] - self.p_right[0, 3]) / self.p_right[0, 0]

    def velo_to_cam(self):
        """4x4 transform from the velodyne frame to the rectified camera frame.

        Missing matrices are treated as identity.
        """
        rect = np.eye(4)
        if self.r0_rect is not None:
            rect[:3, :3] = self.r0_rect
        tr = np.eye(4)
        if self.tr_velo_to_cam is not None:
            tr[:3, :4] = self.tr_velo_to_cam
        return rect @ tr


@dataclass(frozen=True)
class LabelRecord:
    category: str
    truncation: float
    occlusion: int
    alpha: float
    bbox2d: tuple
    dims: tuple  # (h, w, l)
    location: tuple  # (x, y, z), bottom-face center
    rotation_y: float
    score: Optional[float] = None

    @property
    def bbox_height(self):
        return self.bbox2d[3] - self.bbox2d[1]


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.float32))

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"points must have shape (N, 4), got {pts.shape}")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    @property
    def xyz(self):
        return self.points[:, :3]


_CALIB_SIZES = {"P0": 12, "P1": 12, "P2": 12, "P3": 12, "R0_rect": 9, "R_rect": 9,
                "Tr_velo_to_cam": 12, "Tr_velo_cam": 12, "Tr_imu_to_velo": 12}


def _fmt(value):
    return repr(float(value))


def parse_calib(text):
    """Parse a KITTI calibration file into a :class:`CameraRig`.

    Only P2/P3 are required. R0_rect and Tr_velo_to_cam are kept when present.
    """
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if ":" not in line:
            raise KittiFormatError(f"expected 'KEY: values', got {raw!r}", lineno)
        key, _, rest = line.partition(":")
        key = key.strip()
        tokens = rest.split()
        try:
            values = [float(t) for t in tokens]
        except ValueError:
            raise KittiFormatError(f"non-numeric value in {key!r}: {raw!r}", lineno) from None
        expected = _CALIB_SIZES.get(key)
        if expected is not None and len(values) != expected:
            raise KittiFormatError(f"{key} needs {expected} numbers, got {len(values)}", lineno)
        entries[key] = values

    for key in ("P2", "P3"):
        if key not in entries:
            raise KittiFormatError(f"missing {key}")
    r0 = entries.get("R0_rect", entries.get("R_rect"))
    tr = entries.get("Tr_velo_to_cam", entries.get("Tr_velo_cam"))
    return CameraRig(
        p_left=np.array(entries["P2"]).reshape(3, 4),
        p_right=np.array(entries["P3"]).reshape(3, 4),
        r0_rect=None if r0 is None else np.array(r0).reshape(3, 3),
        tr_velo_to_cam=None if tr is None else np.array(tr).reshape(3, 4),
    )


def serialize_calib(rig):
    lines = [
        "P2: " + " ".join(_fmt(v) for v in rig.p_left.ravel()),
        "P3: " + " ".join(_fmt(v) for v in rig.p_right.ravel()),
    ]
    if rig.r0_rect is not None:
        lines.append("R0_rect: " + " ".join(_fmt(v) for v in rig.r0_rect.ravel()))
    if rig.tr_velo_to_cam is not None:
        lines.append("Tr_velo_to_cam: " + " ".join(_fmt(v) for v in rig.tr_velo_to_cam.ravel()))
    return "\n".join(lines) + "\n"


def parse_label_line(line, lineno=1):
    fields = line.split()
    if len(fields) not in (15, 16):
        raise KittiFormatError(f"expected 15 or 16 fields, got {len(fields)}", lineno)
    try:
        nums = [float(f) for f in fields[1:]]
        occlusion = int(float(fields[2]))
    except ValueError:
        raise KittiFormatError(f"non-numeric field in {line.strip()!r}", lineno) from None
    if not all(math.isfinite(v) for v in nums):
        raise KittiFormatError("non-finite value", lineno)
    return LabelRecord(
        category=fields[0],
        truncation=nums[0],
        occlusion=occlusion,
        alpha=nums[2],
        bbox2d=tuple(nums[3:7]),
        dims=tuple(nums[7:10]),
        location=tuple(nums[10:13]),
        rotation_y=nums[13],
        score=nums[14] if len(nums) == 15 else None,
    )


def parse_labels(text):
    records = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if raw.strip():
            records.append(parse_label_line(raw, lineno))
    return records


def serialize_label(rec):
    parts = [rec.category, _fmt(rec.truncation), str(int(rec.occlusion)), _fmt(rec.alpha)]
    parts += [_fmt(v) for v in rec.bbox2d]
    parts += [_fmt(v) for v in rec.dims]
    parts += [_fmt(v) for v in rec.location]
    parts.append(_fmt(rec.rotation_y))
    if rec.score is not None:
        parts.append(f"{rec.score:.6f}")
    return " ".join(parts)


def serialize_labels(records):
    return "".join(serialize_label(r) + "\n" for r in records)


def read_point_cloud(data):
    if len(data) % 16:
        raise KittiFormatError(f"velodyne payload of {len(data)} bytes is not a multiple of 16")
    pts = np.frombuffer(bytes(data), dtype="<f4").reshape(-1, 4)
    return PointCloud(pts.astype(np.float32))


def write_point_cloud(cloud):
    return np.ascontiguousarray(cloud.points, dtype="<f4").tobytes()


def transform_cloud_to_camera(cloud, extrinsics):
    """Map every point through a 4x4 rigid transform, keeping reflectance."""
    ext = np.asarray(extrinsics, dtype=np.float64)
    xyz = cloud.points[:, :3].astype(np.float64)
    out = xyz @ ext[:3, :3].T + ext[:3, 3]
    pts = np.column_stack([out, cloud.points[:, 3].astype(np.float64)])
    return PointCloud(pts)
