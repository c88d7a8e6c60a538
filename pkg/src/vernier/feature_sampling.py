"""Colour a candidate lattice with features.

Two routes are supported. Stereo aggregation projects every candidate into
the left and right feature maps and concatenates the bilinear samples.
Volume aggregation trilinearly samples a precomputed feature volume.

Out-of-range samples are zero-filled and flagged rather than edge-clamped.
A sample is out of range only when all of its interpolation neighbours fall
outside the lattice; partially covered samples blend against zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container

BEHIND_EPS = 1e-6


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureMap:
    data: np.ndarray  # (height, width, channels)
    stride: float = 4.0

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[..., None]
        if arr.ndim != 3:
            raise ValueError(f"feature map must be (H, W, C), got {arr.shape}")
        if self.stride <= 0:
            raise ValueError("stride must be > 0")
        object.__setattr__(self, "data", arr)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    def to_bytes(self):
        return container.pack(self.data)

    @classmethod
    def from_bytes(cls, data, stride=4.0):
        arr = container.unpack(data)
        if arr.ndim != 3:
            raise container.ContainerError(f"feature map container must be 2D, got {arr.ndim - 1}D")
        return cls(arr, stride)


@dataclass(frozen=True)
class FeatureVolume:
    data: np.ndarray  # (nx, ny, nz, channels), node values
    origin: tuple = (0.0, 0.0, 0.0)  # camera-frame position of node (0, 0, 0)
    cell_size: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[..., None]
        if arr.ndim != 4:
            raise ValueError(f"feature volume must be (nx, ny, nz, C), got {arr.shape}")
        cell = np.broadcast_to(np.asarray(self.cell_size, dtype=np.float64), (3,))
        if np.any(cell <= 0):
            raise ValueError("cell size must be > 0")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "cell_size", tuple(float(v) for v in cell))

    @property
    def extents(self):
        return self.data.shape[:3]

    @property
    def channels(self):
        return self.data.shape[3]

    def to_bytes(self):
        return container.pack(self.data)

    @classmethod
    def from_bytes(cls, data, origin=(0.0, 0.0, 0.0), cell_size=(1.0, 1.0, 1.0)):
        arr = container.unpack(data)
        if arr.ndim != 4:
            raise container.ContainerError(f"feature volume container must be 3D, got {arr.ndim - 1}D")
        return cls(arr, origin, cell_size)


@dataclass(frozen=True)
class ColoredGrid:
    grid: object
    features: np.ndarray  # grid shape + (channels,)
    valid: np.ndarray  # grid shape, bool


def project_points(points, proj):
    """Pinhole projection of (N, 3) points. Returns (uv, in_front)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    P = np.asarray(proj, dtype=np.float64).reshape(3, 4)
    hom = pts @ P[:, :3].T + P[:, 3]
    w = hom[:, 2]
    in_front = w > BEHIND_EPS
    safe_w = np.where(in_front, w, 1.0)
    uv = hom[:, :2] / safe_w[:, None]
    uv[~in_front] = np.nan
    return uv, in_front


def project(point, proj):
    """Project one camera-frame point; returns ``(u, v)`` or ``None`` when behind the camera."""
    uv, front = project_points(point, proj)
    if not front[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def bilinear_sample_many(fmap, uv):
    """Bilinear samples at pixel coordinates ``uv`` (N, 2). Returns (values, valid)."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    H, W, C = fmap.data.shape
    fx = uv[:, 0] / fmap.stride
    fy = uv[:, 1] / fmap.stride
    finite = np.isfinite(fx) & np.isfinite(fy)
    valid = finite & (fx > -1) & (fx < W) & (fy > -1) & (fy < H)
    fx = np.where(valid, fx, 0.0)
    fy = np.where(valid, fy, 0.0)
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    ax = fx - x0
    ay = fy - y0
    out = np.zeros((uv.shape[0], C))
    for dy, wy in ((0, 1.0 - ay), (1, ay)):
        for dx, wx in ((0, 1.0 - ax), (1, ax)):
            xs, ys = x0 + dx, y0 + dy
            inb = valid & (xs >= 0) & (xs < W) & (ys >= 0) & (ys < H)
            vals = fmap.data[np.clip(ys, 0, H - 1), np.clip(xs, 0, W - 1)]
            out += (wx * wy * inb)[:, None] * vals
    return out, valid


def bilinear_sample(fmap, u, v):
    values, valid = bilinear_sample_many(fmap, [[u, v]])
    return values[0], bool(valid[0])


def aggregate_stereo(grid, left, right, rig):
    if left.channels != right.channels:
        raise ConfigurationError(
            f"left map has {left.channels} channels, right map has {right.channels}"
        )
    pts = grid.candidates.reshape(-1, 3)
    feats = []
    valids = []
    for fmap, proj in ((left, rig.p_left), (right, rig.p_right)):
        uv, front = project_points(pts, proj)
        vals, ok = bilinear_sample_many(fmap, uv)
        ok &= front
        vals[~ok] = 0.0
        feats.append(vals)
        valids.append(ok)
    valid = valids[0] | valids[1]
    features = np.concatenate(feats, axis=1)
    features[~valid] = 0.0
    shape = grid.spec.shape
    return ColoredGrid(grid, features.reshape(shape + (-1,)), valid.reshape(shape))


def trilinear_sample_many(volume, points):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    ext = np.array(volume.extents)
    f = (pts - np.array(volume.origin)) / np.array(volume.cell_size)
    valid = np.all((f > -1) & (f < ext), axis=1)
    f = np.where(valid[:, None], f, 0.0)
    base = np.floor(f).astype(np.int64)
    frac = f - base
    out = np.zeros((pts.shape[0], volume.channels))
    for corner in range(8):
        offs = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
        idx = base + offs
        weight = np.prod(np.where(offs == 1, frac, 1.0 - frac), axis=1)
        inb = valid & np.all((idx >= 0) & (idx < ext), axis=1)
        idx = np.clip(idx, 0, ext - 1)
        vals = volume.data[idx[:, 0], idx[:, 1], idx[:, 2]]
        out += (weight * inb)[:, None] * vals
    return out, valid


def aggregate_volume(grid, volume):
    features, valid = trilinear_sample_many(volume, grid.candidates.reshape(-1, 3))
    features[~valid] = 0.0
    shape = grid.spec.shape
    return ColoredGrid(grid, features.reshape(shape + (-1,)), valid.reshape(shape))
